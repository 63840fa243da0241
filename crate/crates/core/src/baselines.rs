//! Deterministic PDHG and its stochastic block variant SPDHG.
//!
//! Both run the primal step first and extrapolate the dual image
//! `z = K^T y`:
//!
//! ```text
//! x+   = prox_{tau phi}(x - tau (grad h(x) + z_bar))
//! y_i+ = prox_{sigma g_i*}(y_i + sigma K_i x+)        (all i for PDHG)
//! z+   = z + K_i^T (y_i+ - y_i)
//! z_bar = z+ + theta / p_i (z+ - z)
//! ```
//!
//! With one dual block and `p = 1` the two coincide. A nonzero `h` enters
//! through its gradient.

use crate::data::{rng_for, SOLVER_STREAM};
use crate::error::{check_len, param, Result};
use crate::metrics::{check_finite, Method, Recorder, RunOptions, RunOutput};
use crate::problem::ProblemSpec;

/// Step sizes and extrapolation weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdhgConfig {
    pub tau: f64,
    pub sigma: f64,
    pub theta: f64,
}

impl PdhgConfig {
    /// `tau = sigma = 0.99 / ||K||`, `theta = 1`.
    pub fn pdhg_default(spec: &ProblemSpec) -> Result<Self> {
        let norm = spec.k.opnorm_sq()?.value.sqrt().max(f64::MIN_POSITIVE);
        Ok(PdhgConfig {
            tau: 0.99 / norm,
            sigma: 0.99 / norm,
            theta: 1.0,
        })
    }

    /// `tau = sigma = 5 / ||K||`, `theta = 1`.
    pub fn spdhg_default(spec: &ProblemSpec) -> Result<Self> {
        let norm = spec.k.opnorm_sq()?.value.sqrt().max(f64::MIN_POSITIVE);
        Ok(PdhgConfig {
            tau: 5.0 / norm,
            sigma: 5.0 / norm,
            theta: 1.0,
        })
    }

    /// Positive steps, `theta >= 0`.
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(param("tau", format!("must be positive and finite, got {}", self.tau)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(param("sigma", format!("must be positive and finite, got {}", self.sigma)));
        }
        if !(self.theta >= 0.0 && self.theta.is_finite()) {
            return Err(param("theta", format!("must be finite and >= 0, got {}", self.theta)));
        }
        Ok(())
    }

    /// `validate` plus `sigma tau ||K||^2 < 1`.
    pub fn validate_pdhg(&self, spec: &ProblemSpec) -> Result<()> {
        self.validate()?;
        let product = self.sigma * self.tau * spec.k.opnorm_sq()?.value;
        if product >= 1.0 {
            return Err(param(
                "sigma * tau",
                format!("sigma tau ||K||^2 = {product} must be < 1"),
            ));
        }
        Ok(())
    }

    /// `max_i sigma tau ||K_i||^2 / p_i`; below 1 is the step condition of the
    /// stochastic method. Reported, not enforced.
    pub fn spdhg_step_ratio(&self, spec: &ProblemSpec) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for i in 0..spec.m() {
            let block = spec.k.row_block_matrix(i)?;
            let norm_sq = block.opnorm_sq()?.value;
            worst = worst.max(self.sigma * self.tau * norm_sq / spec.q_hat.probs()[i]);
        }
        Ok(worst)
    }
}

struct Iterates {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    z_bar: Vec<f64>,
    grad: Vec<f64>,
    kx: Vec<f64>,
    buf_in: Vec<f64>,
    buf_out: Vec<f64>,
}

impl Iterates {
    fn new(spec: &ProblemSpec, x0: &[f64], y0: &[f64]) -> Result<Self> {
        check_len("x0", spec.k.cols(), x0.len())?;
        check_len("y0", spec.k.rows(), y0.len())?;
        let z = spec.k.apply_adjoint(y0)?;
        let max_block = (0..spec.m()).map(|i| spec.k.row_partition().block_len(i)).max().unwrap_or(0);
        Ok(Iterates {
            x: x0.to_vec(),
            y: y0.to_vec(),
            z_bar: z.clone(),
            z,
            grad: vec![0.0; x0.len()],
            kx: vec![0.0; y0.len()],
            buf_in: vec![0.0; max_block.max(x0.len())],
            buf_out: vec![0.0; max_block.max(x0.len())],
        })
    }

    /// `x = prox_{tau phi}(x - tau (grad h(x) + z_bar))`, block by block.
    fn primal_step(&mut self, spec: &ProblemSpec, tau: f64) {
        let cp = spec.k.col_partition();
        for (j, f) in spec.f_blocks.iter().enumerate() {
            let cols = cp.range(j);
            let bj = cols.len();
            spec.h.block_gradient_into(&self.x, cols.clone(), &mut self.grad[..bj]);
            for (o, c) in cols.clone().enumerate() {
                self.buf_in[o] = self.x[c] - tau * (self.grad[o] + self.z_bar[c]);
            }
            f.prox_into(&self.buf_in[..bj], tau, &mut self.buf_out[..bj]);
            self.x[cols].copy_from_slice(&self.buf_out[..bj]);
        }
    }
}

/// Deterministic PDHG. One epoch is one iteration.
pub fn pdhg_run(spec: &ProblemSpec, cfg: &PdhgConfig, x0: &[f64], y0: &[f64], opts: &RunOptions) -> Result<RunOutput> {
    opts.validate()?;
    cfg.validate_pdhg(spec)?;
    let mut it = Iterates::new(spec, x0, y0)?;
    let mut dy = vec![0.0; spec.k.rows()];
    let mut dz = vec![0.0; spec.k.cols()];
    let mut rec = Recorder::new(spec, Method::Pdhg, None, opts);
    if opts.include_initial {
        rec.record(0, 0, &it.x, &it.y, None)?;
    }
    let rp = spec.k.row_partition();
    for epoch in 1..=opts.epochs {
        let k = epoch - 1;
        it.primal_step(spec, cfg.tau);
        check_finite(k, "x", &it.x)?;
        spec.k.apply_into(&it.x, &mut it.kx);
        for (i, g) in spec.g_blocks.iter().enumerate() {
            let rows = rp.range(i);
            let bi = rows.len();
            for (o, r) in rows.clone().enumerate() {
                it.buf_in[o] = it.y[r] + cfg.sigma * it.kx[r];
            }
            g.prox_conjugate_into(&it.buf_in[..bi], cfg.sigma, &mut it.buf_out[..bi]);
            for (o, r) in rows.enumerate() {
                dy[r] = it.buf_out[o] - it.y[r];
                it.y[r] = it.buf_out[o];
            }
        }
        check_finite(k, "y", &it.y)?;
        spec.k.apply_adjoint_into(&dy, &mut dz);
        for c in 0..dz.len() {
            it.z[c] += dz[c];
            it.z_bar[c] = it.z[c] + cfg.theta * dz[c];
        }
        if epoch % opts.cadence == 0 || epoch == opts.epochs {
            rec.record(epoch, epoch, &it.x, &it.y, None)?;
        }
    }
    Ok(rec.finish(it.x, it.y))
}

/// Stochastic PDHG sampling one dual block per iteration from `q_hat`.
/// One epoch is `m` iterations.
pub fn spdhg_run(spec: &ProblemSpec, cfg: &PdhgConfig, x0: &[f64], y0: &[f64], opts: &RunOptions) -> Result<RunOutput> {
    opts.validate()?;
    cfg.validate()?;
    let mut it = Iterates::new(spec, x0, y0)?;
    let mut rng = rng_for(opts.seed, SOLVER_STREAM);
    let m = spec.m();
    let probs = spec.q_hat.probs().to_vec();
    let mut dz = vec![0.0; spec.k.cols()];
    let mut rec = Recorder::new(spec, Method::Spdhg, None, opts);
    if opts.include_initial {
        rec.record(0, 0, &it.x, &it.y, None)?;
    }
    let rp = spec.k.row_partition();
    let mut k = 0;
    for epoch in 1..=opts.epochs {
        for _ in 0..m {
            it.primal_step(spec, cfg.tau);
            check_finite(k, "x", &it.x)?;
            let i = spec.q_hat.sample(&mut rng);
            let rows = rp.range(i);
            let bi = rows.len();
            for (o, r) in rows.clone().enumerate() {
                let kx_r: f64 = spec.k.row(r).map(|(c, v)| v * it.x[c]).sum();
                it.buf_in[o] = it.y[r] + cfg.sigma * kx_r;
            }
            spec.g_blocks[i].prox_conjugate_into(&it.buf_in[..bi], cfg.sigma, &mut it.buf_out[..bi]);
            for (o, r) in rows.clone().enumerate() {
                let d = it.buf_out[o] - it.y[r];
                it.y[r] = it.buf_out[o];
                it.buf_in[o] = d;
            }
            check_finite(k, "y", &it.y[rows])?;
            dz.fill(0.0);
            spec.k.row_block_adjoint_axpy(i, 1.0, &it.buf_in[..bi], &mut dz);
            let extrap = cfg.theta / probs[i];
            for c in 0..dz.len() {
                it.z[c] += dz[c];
                it.z_bar[c] = it.z[c] + extrap * dz[c];
            }
            k += 1;
        }
        if epoch % opts.cadence == 0 || epoch == opts.epochs {
            rec.record(k, epoch, &it.x, &it.y, None)?;
        }
    }
    Ok(rec.finish(it.x, it.y))
}
