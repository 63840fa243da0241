//! Semi-randomized primal-dual method.
//!
//! Each iteration takes a full dual prox step on `g*` (through the Moreau
//! identity), one sampled primal block prox step, and a three-point update of
//! the multiplier. All `K`-products except `K_j^T y` and `K_j dx_j` come from
//! caches.

use rand_chacha::ChaCha8Rng;

use crate::data::{rng_for, SOLVER_STREAM};
use crate::error::{check_len, param, Result};
use crate::metrics::{check_finite, Method, Recorder, RunOptions, RunOutput};
use crate::problem::ProblemSpec;
use crate::schedule::{Family, ParamState, Schedule};

pub use crate::frpd::StepFlags;

/// Iterates of the semi-randomized method.
#[derive(Debug, Clone)]
pub struct SrpdState {
    pub x: Vec<f64>,
    pub x_tilde: Vec<f64>,
    /// `x_hat` of the previous iteration.
    pub x_hat_prev: Vec<f64>,
    pub y_hat: Vec<f64>,
    pub y_hat_prev: Vec<f64>,
    /// Last dual prox output; always in `dom g*`.
    pub y: Vec<f64>,
    pub y_bar: Vec<f64>,
    /// Cache of `K x`.
    pub u: Vec<f64>,
    /// Cache of `K x_tilde`.
    pub u_tilde: Vec<f64>,
    /// Cache of `K x_hat_prev`.
    pub v_prev: Vec<f64>,
    pub k: usize,
    /// Primal block sampled by the last step.
    pub last_block: Option<usize>,
    rng: ChaCha8Rng,
    kxh: Vec<f64>,
    z: Vec<f64>,
    y_next: Vec<f64>,
    buf_in: Vec<f64>,
    buf_out: Vec<f64>,
    buf_a: Vec<f64>,
    buf_b: Vec<f64>,
}

pub fn check_schedule(schedule: &Schedule) -> Result<()> {
    if schedule.kind.family() != Family::Srpd {
        return Err(param(
            "schedule",
            format!("{} drives the fully randomized method, not srpd", schedule.kind),
        ));
    }
    Ok(())
}

/// `x_tilde = x0`, `y = y_bar = y_hat0`; lags `x_hat_prev = x0`,
/// `y_hat_prev = y_hat0`.
pub fn init(spec: &ProblemSpec, x0: &[f64], y0: &[f64], schedule: &Schedule, seed: u64) -> Result<SrpdState> {
    check_schedule(schedule)?;
    check_len("x0", spec.k.cols(), x0.len())?;
    check_len("y0", spec.k.rows(), y0.len())?;
    let kx = spec.k.apply(x0)?;
    let d = spec.k.rows();
    let max_block = (0..spec.n())
        .map(|j| spec.k.col_partition().block_len(j))
        .chain((0..spec.m()).map(|i| spec.k.row_partition().block_len(i)))
        .max()
        .unwrap_or(0);
    Ok(SrpdState {
        x: x0.to_vec(),
        x_tilde: x0.to_vec(),
        x_hat_prev: x0.to_vec(),
        y_hat: y0.to_vec(),
        y_hat_prev: y0.to_vec(),
        y: y0.to_vec(),
        y_bar: y0.to_vec(),
        u: kx.clone(),
        u_tilde: kx.clone(),
        v_prev: kx,
        k: 0,
        last_block: None,
        rng: rng_for(seed, SOLVER_STREAM),
        kxh: vec![0.0; d],
        z: vec![0.0; d],
        y_next: vec![0.0; d],
        buf_in: vec![0.0; max_block],
        buf_out: vec![0.0; max_block],
        buf_a: vec![0.0; max_block],
        buf_b: vec![0.0; max_block],
    })
}

impl SrpdState {
    /// Largest relative gap between a cache and its fresh product.
    pub fn cache_drift(&self, spec: &ProblemSpec) -> Result<f64> {
        let drift = |cache: &[f64], v: &[f64]| -> Result<f64> {
            let fresh = spec.k.apply(v)?;
            let num = fresh.iter().zip(cache).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let den = 1.0 + fresh.iter().map(|a| a * a).sum::<f64>().sqrt();
            Ok(num / den)
        };
        Ok(drift(&self.u, &self.x)?
            .max(drift(&self.u_tilde, &self.x_tilde)?)
            .max(drift(&self.v_prev, &self.x_hat_prev)?))
    }

    pub fn refresh_caches(&mut self, spec: &ProblemSpec) -> Result<()> {
        self.u = spec.k.apply(&self.x)?;
        self.u_tilde = spec.k.apply(&self.x_tilde)?;
        self.v_prev = spec.k.apply(&self.x_hat_prev)?;
        Ok(())
    }
}

pub fn step(state: &mut SrpdState, spec: &ProblemSpec, schedule: &Schedule, p: &ParamState, flags: StepFlags) -> Result<()> {
    let j = spec.q.sample(&mut state.rng);
    step_with_block(state, spec, schedule, p, flags, j)
}

/// One iteration with the primal block supplied by the caller.
pub fn step_with_block(
    state: &mut SrpdState,
    spec: &ProblemSpec,
    schedule: &Schedule,
    p: &ParamState,
    flags: StepFlags,
    j: usize,
) -> Result<()> {
    let (tau, rho, t0) = (p.tau, p.rho, schedule.tau0);
    let eta = if flags.eta_zero { 0.0 } else { p.eta };
    let omt = 1.0 - tau;
    let ratio = tau / t0;

    // x becomes x_hat; kxh = K x_hat
    for t in 0..state.u.len() {
        state.kxh[t] = omt * state.u[t] + tau * state.u_tilde[t];
        state.z[t] = state.y_hat[t] + rho * state.kxh[t];
    }
    for (x, xt) in state.x.iter_mut().zip(&state.x_tilde) {
        *x = omt * *x + tau * xt;
    }

    // full dual step y+ = prox_{rho g*}(y_hat + rho K x_hat)
    let rp = spec.k.row_partition();
    for (i, g) in spec.g_blocks.iter().enumerate() {
        let rows = rp.range(i);
        g.prox_conjugate_into(&state.z[rows.clone()], rho, &mut state.y_next[rows]);
    }
    check_finite(state.k, "y", &state.y_next)?;

    // primal block
    let cols = spec.k.col_partition().range(j);
    let bj = cols.len();
    let step_f = t0 * p.beta / (spec.sigma[j] * tau);
    spec.h.block_gradient_into(&state.x, cols.clone(), &mut state.buf_a[..bj]);
    spec.k.col_block_adjoint_into(j, &state.y_next, &mut state.buf_b[..bj]);
    for (o, c) in cols.clone().enumerate() {
        state.buf_in[o] = state.x_tilde[c] - step_f * (state.buf_a[o] + state.buf_b[o]);
    }
    spec.f_blocks[j].prox_into(&state.buf_in[..bj], step_f, &mut state.buf_out[..bj]);
    state.x_hat_prev.copy_from_slice(&state.x);
    let dx = &mut state.buf_a[..bj];
    for (o, c) in cols.clone().enumerate() {
        dx[o] = state.buf_out[o] - state.x_tilde[c];
        state.x_tilde[c] = state.buf_out[o];
        state.x[c] += ratio * dx[o];
    }
    check_finite(state.k, "x_tilde", &state.x_tilde[cols])?;

    // u+ = K x_hat + ratio K_j dx; Theta = (u+ - K x_hat) - (1 - tau)(u - v_prev),
    // with u still holding K x^k here
    for t in 0..state.u.len() {
        state.z[t] = -omt * (state.u[t] - state.v_prev[t]);
        state.u[t] = state.kxh[t];
    }
    spec.k.col_block_axpy_unchecked(j, ratio, dx, &mut state.u);
    spec.k.col_block_axpy_unchecked(j, 1.0, dx, &mut state.u_tilde);

    let a = eta * omt / p.rho_prev;
    let b = 1.0 - eta / rho;
    let c = eta / rho;
    for t in 0..state.u.len() {
        let theta = (state.u[t] - state.kxh[t]) + state.z[t];
        let next = a * state.y_hat_prev[t] + b * state.y_hat[t] + c * state.y_next[t] + eta * theta - a * state.y[t];
        state.y_hat_prev[t] = state.y_hat[t];
        state.y_hat[t] = next;
    }
    if flags.track_dual_average {
        for (yb, y) in state.y_bar.iter_mut().zip(&state.y_next) {
            *yb = omt * *yb + tau * y;
        }
    }
    std::mem::swap(&mut state.y, &mut state.y_next);
    std::mem::swap(&mut state.v_prev, &mut state.kxh);
    state.k += 1;
    state.last_block = Some(j);
    Ok(())
}

/// Iterations per epoch: `n`.
pub fn iterations_per_epoch(spec: &ProblemSpec) -> usize {
    spec.n()
}

/// Runs `opts.epochs` epochs, checkpointing `(x^k, y_bar^k)` every
/// `opts.cadence` epochs.
pub fn run(spec: &ProblemSpec, schedule: &Schedule, x0: &[f64], y0: &[f64], opts: &RunOptions) -> Result<RunOutput> {
    opts.validate()?;
    let mut state = init(spec, x0, y0, schedule, opts.seed)?;
    let flags = StepFlags {
        eta_zero: opts.eta_zero,
        track_dual_average: opts.track_dual_average,
    };
    let per_epoch = iterations_per_epoch(spec);
    let mut rec = Recorder::new(spec, Method::Srpd, Some(schedule.kind), opts);
    if opts.include_initial {
        rec.record(0, 0, &state.x, &state.y_bar, None)?;
    }
    let mut params = schedule.initial();
    for epoch in 1..=opts.epochs {
        for _ in 0..per_epoch {
            step(&mut state, spec, schedule, &params, flags)?;
            params = schedule.advance(&params);
        }
        if epoch % opts.cadence == 0 || epoch == opts.epochs {
            check_finite(state.k, "y_hat", &state.y_hat)?;
            state.refresh_caches(spec)?;
            rec.record(state.k, epoch, &state.x, &state.y_bar, None)?;
        }
    }
    Ok(rec.finish(state.x, state.y_bar))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blockmat::BlockMatrix;
    use crate::problem::SmoothTerm;
    use crate::prox::ProxFn;
    use crate::schedule::ScheduleKind;
    use crate::testkit::{max_abs_diff, mixed_instance, mixed_parts, random_matrix, saddle_instance};

    fn schedule(spec: &ProblemSpec, kind: ScheduleKind, c: Option<f64>, rho0: f64) -> Schedule {
        Schedule::new(kind, c, rho0, &spec.constants().unwrap()).unwrap()
    }

    #[test]
    fn init_sets_lags() {
        let spec = mixed_instance(5, 4, 1, 2, 0);
        let x0 = [0.2, -0.4, 0.1, 0.9];
        let s = schedule(&spec, ScheduleKind::S3, None, 0.5);
        let st = init(&spec, &x0, &[0.1; 5], &s, 0).unwrap();
        let kx = spec.k.apply(&x0).unwrap();
        assert_eq!(st.v_prev, kx);
        assert_eq!(st.u, kx);
        assert_eq!(st.x_hat_prev, x0);
        assert_eq!(st.y_hat_prev, st.y_hat);
        let p = s.initial();
        assert_eq!(p.rho_prev, p.rho);
    }

    #[test]
    fn rejects_frpd_schedule() {
        let spec = mixed_instance(4, 4, 1, 2, 0);
        let s = Schedule::new(ScheduleKind::S1, None, 0.5, &spec.constants().unwrap()).unwrap();
        assert!(init(&spec, &[0.0; 4], &[0.0; 4], &s, 0).is_err());
    }

    #[test]
    fn saddle_point_is_fixed() {
        let (spec, xs, ys) = saddle_instance(6, 4, 2, 2, 3);
        let s = schedule(&spec, ScheduleKind::S3, None, 0.7);
        let mut st = init(&spec, &xs, &ys, &s, 5).unwrap();
        let mut p = s.initial();
        for _ in 0..200 {
            step(&mut st, &spec, &s, &p, StepFlags::default()).unwrap();
            p = s.advance(&p);
        }
        assert!(max_abs_diff(&st.x, &xs) < 1e-10);
        assert!(max_abs_diff(&st.y, &ys) < 1e-10);
        assert!(max_abs_diff(&st.y_hat, &ys) < 1e-10);
        assert!(max_abs_diff(&st.y_bar, &ys) < 1e-10);
    }

    #[test]
    fn zero_g_keeps_dual_zero() {
        let k = random_matrix(5, 4, 2).with_even_blocks(1, 2).unwrap();
        let spec = ProblemSpec::new(k, vec![ProxFn::SqNorm { mu: 1.0 }; 2], vec![ProxFn::Zero], SmoothTerm::Zero).unwrap();
        let s = schedule(&spec, ScheduleKind::S3, None, 0.5);
        let mut st = init(&spec, &[1.0; 4], &[0.0; 5], &s, 1).unwrap();
        let mut p = s.initial();
        for _ in 0..30 {
            step(&mut st, &spec, &s, &p, StepFlags::default()).unwrap();
            assert!(st.y.iter().all(|v| *v == 0.0), "{:?}", st.y);
            p = s.advance(&p);
        }
    }

    #[test]
    fn dual_stays_in_conjugate_domain() {
        let spec = mixed_instance(12, 8, 3, 4, 5);
        let s = schedule(&spec, ScheduleKind::S3, None, 2.0);
        let mut st = init(&spec, &[1.0; 8], &[0.0; 12], &s, 2).unwrap();
        let mut p = s.initial();
        for _ in 0..300 {
            step(&mut st, &spec, &s, &p, StepFlags::default()).unwrap();
            assert!(st.y.iter().all(|v| v.abs() <= 1.0));
            assert!(st.y_bar.iter().all(|v| v.abs() <= 1.0 + 1e-12));
            p = s.advance(&p);
        }
    }

    #[test]
    fn single_block_ignores_seed() {
        let spec = mixed_instance(5, 4, 2, 1, 2);
        let s = schedule(&spec, ScheduleKind::S3, None, 0.3);
        let a = run(&spec, &s, &[0.5; 4], &[0.0; 5], &RunOptions::new(20, 1)).unwrap();
        let b = run(&spec, &s, &[0.5; 4], &[0.0; 5], &RunOptions::new(20, 42)).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
    }

    #[test]
    fn caches_track_products() {
        let spec = mixed_instance(30, 20, 3, 5, 6);
        let s = schedule(&spec, ScheduleKind::S3, None, 0.2);
        let mut st = init(&spec, &[0.1; 20], &[0.0; 30], &s, 3).unwrap();
        let mut p = s.initial();
        for _ in 0..2000 {
            step(&mut st, &spec, &s, &p, StepFlags::default()).unwrap();
            p = s.advance(&p);
        }
        assert!(st.cache_drift(&spec).unwrap() <= 1e-8);
    }

    /// Dense iteration in residual form:
    /// `e_k = (y_k - y_hat_{k-1}) / rho_{k-1} + K (x_k - x_hat_{k-1})`,
    /// `y_hat_{k+1} = y_hat_k + eta_k e_{k+1} - eta_k (1 - tau_k) e_k`.
    #[test]
    fn matches_dense_oracle() {
        let spec = mixed_instance(9, 7, 2, 3, 8);
        let (b, diag) = mixed_parts(&spec);
        let kd = spec.k.to_dense();
        let kx = |x: &[f64]| -> Vec<f64> { kd.iter().map(|row| row.iter().zip(x).map(|(a, v)| a * v).sum()).collect() };
        let soft = |v: f64, t: f64| v.signum() * (v.abs() - t).max(0.0);
        let s = schedule(&spec, ScheduleKind::S3, Some(1.5 / spec.constants().unwrap().tau0_primal), 0.4);
        let t0 = s.tau0;
        let x0: Vec<f64> = (0..7).map(|c| 0.1 * c as f64 - 0.3).collect();
        let y0: Vec<f64> = (0..9).map(|t| 0.05 * t as f64).collect();
        let mut st = init(&spec, &x0, &y0, &s, 0).unwrap();

        let (mut x, mut xt, mut yh, mut yb) = (x0.clone(), x0.clone(), y0.clone(), y0.clone());
        let mut e = vec![0.0; 9];
        let mut p = s.initial();
        for it in 0..60 {
            let j = (it * 2 + 1) % 3;
            step_with_block(&mut st, &spec, &s, &p, StepFlags::default(), j).unwrap();

            let tau = p.tau;
            let xh: Vec<f64> = x.iter().zip(&xt).map(|(a, v)| (1.0 - tau) * a + tau * v).collect();
            let kxh = kx(&xh);
            let y: Vec<f64> = (0..9).map(|t| (yh[t] + p.rho * kxh[t] - p.rho * b[t]).clamp(-1.0, 1.0)).collect();
            let sf = t0 * p.beta / (tau * spec.sigma[j]);
            let mut xt_new = xt.clone();
            for c in spec.k.col_partition().range(j) {
                let kty: f64 = (0..9).map(|t| kd[t][c] * y[t]).sum();
                xt_new[c] = soft(xt[c] - sf * (diag[c] * xh[c] + kty), sf * 0.1);
            }
            x = (0..7).map(|c| xh[c] + tau / t0 * (xt_new[c] - xt[c])).collect();
            xt = xt_new;
            let kxn = kx(&x);
            let e_new: Vec<f64> = (0..9).map(|t| (y[t] - yh[t]) / p.rho + kxn[t] - kxh[t]).collect();
            for t in 0..9 {
                yh[t] += p.eta * e_new[t] - p.eta * (1.0 - tau) * e[t];
                yb[t] = (1.0 - tau) * yb[t] + tau * y[t];
            }
            e = e_new;
            p = s.advance(&p);
        }
        assert!(max_abs_diff(&st.x, &x) < 1e-10);
        assert!(max_abs_diff(&st.x_tilde, &xt) < 1e-10);
        assert!(max_abs_diff(&st.y_hat, &yh) < 1e-10);
        assert!(max_abs_diff(&st.y_bar, &yb) < 1e-10);
    }

    #[test]
    fn identity_problem_converges() {
        // min (1/2)x^2 + |x - 1| over one coordinate: x* = 1
        let k = BlockMatrix::identity(1).unwrap();
        let spec =
            ProblemSpec::new(k, vec![ProxFn::SqNorm { mu: 1.0 }], vec![ProxFn::l1_shifted(1.0, vec![1.0])], SmoothTerm::Zero)
                .unwrap();
        let s = schedule(&spec, ScheduleKind::S3, Some(2.0), 1.0);
        let out = run(&spec, &s, &[-3.0], &[0.0], &RunOptions::new(2000, 0)).unwrap();
        assert!((out.x[0] - 1.0).abs() < 1e-2, "x = {}", out.x[0]);
    }
}
