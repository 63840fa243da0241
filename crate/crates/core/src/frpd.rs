//! Fully randomized primal-dual method.
//!
//! Each iteration samples one dual block `i` and one primal block `j`
//! independently and applies one prox to each. Full-vector work per iteration
//! is `O(p + d)`; the only matrix work is `K_j^T w` and `K_j dx_j`, so the
//! cost beyond that is `O(nnz(K_j))`.

use rand_chacha::ChaCha8Rng;

use crate::data::{rng_for, SOLVER_STREAM};
use crate::error::{check_len, param, Result};
use crate::metrics::{check_finite, Method, Recorder, RunOptions, RunOutput};
use crate::problem::ProblemSpec;
use crate::schedule::{Family, ParamState, Schedule};

/// Iterates of the fully randomized method.
#[derive(Debug, Clone)]
pub struct FrpdState {
    pub x: Vec<f64>,
    pub x_tilde: Vec<f64>,
    pub r: Vec<f64>,
    pub r_tilde: Vec<f64>,
    pub y_hat: Vec<f64>,
    pub y_bar: Vec<f64>,
    /// Cache of `K x`.
    pub u: Vec<f64>,
    /// Cache of `K x_tilde`.
    pub u_tilde: Vec<f64>,
    pub k: usize,
    /// Blocks sampled by the last step.
    pub last_blocks: Option<(usize, usize)>,
    rng: ChaCha8Rng,
    w: Vec<f64>,
    e_old: Vec<f64>,
    buf_in: Vec<f64>,
    buf_out: Vec<f64>,
    buf_a: Vec<f64>,
    buf_b: Vec<f64>,
}

/// Per-step switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepFlags {
    pub eta_zero: bool,
    pub track_dual_average: bool,
}

impl Default for StepFlags {
    fn default() -> Self {
        StepFlags {
            eta_zero: false,
            track_dual_average: true,
        }
    }
}

pub fn check_schedule(schedule: &Schedule) -> Result<()> {
    if schedule.kind.family() != Family::Frpd {
        return Err(param(
            "schedule",
            format!("{} drives the semi-randomized method, not frpd", schedule.kind),
        ));
    }
    Ok(())
}

/// `x_tilde = x0`, `r = r_tilde = K x0`, `y_bar = y_hat0`.
pub fn init(spec: &ProblemSpec, x0: &[f64], y0: &[f64], schedule: &Schedule, seed: u64) -> Result<FrpdState> {
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
    Ok(FrpdState {
        x: x0.to_vec(),
        x_tilde: x0.to_vec(),
        r: kx.clone(),
        r_tilde: kx.clone(),
        y_hat: y0.to_vec(),
        y_bar: y0.to_vec(),
        u: kx.clone(),
        u_tilde: kx,
        k: 0,
        last_blocks: None,
        rng: rng_for(seed, SOLVER_STREAM),
        w: vec![0.0; d],
        e_old: vec![0.0; d],
        buf_in: vec![0.0; max_block],
        buf_out: vec![0.0; max_block],
        buf_a: vec![0.0; max_block],
        buf_b: vec![0.0; max_block],
    })
}

impl FrpdState {
    /// `||u - Kx|| / (1 + ||Kx||)` and the same for `u_tilde`, the larger one.
    pub fn cache_drift(&self, spec: &ProblemSpec) -> Result<f64> {
        let drift = |cache: &[f64], v: &[f64]| -> Result<f64> {
            let fresh = spec.k.apply(v)?;
            let num = fresh.iter().zip(cache).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let den = 1.0 + fresh.iter().map(|a| a * a).sum::<f64>().sqrt();
            Ok(num / den)
        };
        Ok(drift(&self.u, &self.x)?.max(drift(&self.u_tilde, &self.x_tilde)?))
    }

    /// Recomputes both `K`-product caches.
    pub fn refresh_caches(&mut self, spec: &ProblemSpec) -> Result<()> {
        self.u = spec.k.apply(&self.x)?;
        self.u_tilde = spec.k.apply(&self.x_tilde)?;
        Ok(())
    }

    /// `||Kx - r||` with a fresh product.
    pub fn feasibility(&self, spec: &ProblemSpec) -> Result<f64> {
        let kx = spec.k.apply(&self.x)?;
        Ok(kx.iter().zip(&self.r).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
    }
}

/// One iteration at parameters `p`, sampling blocks from the state's stream.
pub fn step(state: &mut FrpdState, spec: &ProblemSpec, schedule: &Schedule, p: &ParamState, flags: StepFlags) -> Result<()> {
    let i = spec.q_hat.sample(&mut state.rng);
    let j = spec.q.sample(&mut state.rng);
    step_with_blocks(state, spec, schedule, p, flags, i, j)
}

/// One iteration with the sampled blocks supplied by the caller.
pub fn step_with_blocks(
    state: &mut FrpdState,
    spec: &ProblemSpec,
    schedule: &Schedule,
    p: &ParamState,
    flags: StepFlags,
    i: usize,
    j: usize,
) -> Result<()> {
    let (tau, rho, t0) = (p.tau, p.rho, schedule.tau0);
    let eta = if flags.eta_zero { 0.0 } else { p.eta };
    let omt = 1.0 - tau;
    let ratio = tau / t0;

    // r, x, u become r_hat, x_hat, K x_hat; w = y_hat + rho (K x_hat - r_hat)
    for t in 0..state.u.len() {
        state.e_old[t] = state.u[t] - state.r[t];
        let kxh = omt * state.u[t] + tau * state.u_tilde[t];
        let rh = omt * state.r[t] + tau * state.r_tilde[t];
        state.u[t] = kxh;
        state.r[t] = rh;
        state.w[t] = state.y_hat[t] + rho * (kxh - rh);
    }
    for (x, xt) in state.x.iter_mut().zip(&state.x_tilde) {
        *x = omt * *x + tau * xt;
    }

    // dual block: Delta_r = -w_i
    let rows = spec.k.row_partition().range(i);
    let bi = rows.len();
    let step_g = p.gamma * t0 / tau;
    for (z, t) in state.buf_in[..bi].iter_mut().zip(rows.clone()) {
        *z = state.r_tilde[t] + step_g * state.w[t];
    }
    spec.g_blocks[i].prox_into(&state.buf_in[..bi], step_g, &mut state.buf_out[..bi]);
    for (o, t) in rows.clone().enumerate() {
        let dr = state.buf_out[o] - state.r_tilde[t];
        state.r_tilde[t] = state.buf_out[o];
        state.r[t] += ratio * dr;
    }
    check_finite(state.k, "r_tilde", &state.r_tilde[rows])?;

    // primal block: Delta_x = grad_j h(x_hat) + K_j^T w
    let cols = spec.k.col_partition().range(j);
    let bj = cols.len();
    let step_f = t0 * p.beta / (tau * spec.sigma[j]);
    spec.h.block_gradient_into(&state.x, cols.clone(), &mut state.buf_a[..bj]);
    spec.k.col_block_adjoint_into(j, &state.w, &mut state.buf_b[..bj]);
    for (o, c) in cols.clone().enumerate() {
        state.buf_in[o] = state.x_tilde[c] - step_f * (state.buf_a[o] + state.buf_b[o]);
    }
    spec.f_blocks[j].prox_into(&state.buf_in[..bj], step_f, &mut state.buf_out[..bj]);
    let dx = &mut state.buf_a[..bj];
    for (o, c) in cols.clone().enumerate() {
        dx[o] = state.buf_out[o] - state.x_tilde[c];
        state.x_tilde[c] = state.buf_out[o];
        state.x[c] += ratio * dx[o];
    }
    check_finite(state.k, "x_tilde", &state.x_tilde[cols])?;
    spec.k.col_block_axpy_unchecked(j, ratio, dx, &mut state.u);
    spec.k.col_block_axpy_unchecked(j, 1.0, dx, &mut state.u_tilde);

    // multiplier and dual average
    for t in 0..state.u.len() {
        state.y_hat[t] += eta * ((state.u[t] - state.r[t]) - omt * state.e_old[t]);
    }
    if flags.track_dual_average {
        for (yb, w) in state.y_bar.iter_mut().zip(&state.w) {
            *yb = omt * *yb + tau * w;
        }
    }
    state.k += 1;
    state.last_blocks = Some((i, j));
    Ok(())
}

/// Iterations per epoch: `max(n, m)`.
pub fn iterations_per_epoch(spec: &ProblemSpec) -> usize {
    spec.n().max(spec.m())
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
    let mut rec = Recorder::new(spec, Method::Frpd, Some(schedule.kind), opts);
    if opts.include_initial {
        rec.record(0, 0, &state.x, &state.y_bar, Some(state.feasibility(spec)?))?;
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
            let feas = state.feasibility(spec)?;
            rec.record(state.k, epoch, &state.x, &state.y_bar, Some(feas))?;
        }
    }
    Ok(rec.finish(state.x, state.y_bar))
}
