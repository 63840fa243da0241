//! Objective, duality gap and feasibility measurements, trace records, rate
//! fitting and reference solutions.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{pdhg_run, PdhgConfig};
use crate::error::{check_len, param, Error, Result};
use crate::problem::{ProblemConstants, ProblemSpec};
use crate::schedule::{auto_rho0, Schedule, ScheduleKind};
use crate::srpd;

/// Solver that produced a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Frpd,
    Srpd,
    Pdhg,
    Spdhg,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::Frpd => "frpd",
            Method::Srpd => "srpd",
            Method::Pdhg => "pdhg",
            Method::Spdhg => "spdhg",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "frpd" => Ok(Method::Frpd),
            "srpd" => Ok(Method::Srpd),
            "pdhg" => Ok(Method::Pdhg),
            "spdhg" => Ok(Method::Spdhg),
            _ => Err(Error::Config(format!("unknown method `{s}` (expected frpd, srpd, pdhg, spdhg)"))),
        }
    }
}

/// One checkpoint. `None` marks an undefined or infinite quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub method: Method,
    pub schedule: Option<ScheduleKind>,
    pub seed: u64,
    pub k: usize,
    pub epoch: usize,
    pub primal: f64,
    /// `G` at the dual average after it is mapped into `dom G`.
    pub dual: Option<f64>,
    pub gap: Option<f64>,
    /// `||Kx - r||`, fully randomized solver only.
    pub feas: Option<f64>,
    /// Distance of the raw dual average from `dom G`.
    pub dual_violation: f64,
    pub time_ms: Option<f64>,
}

pub const CSV_HEADER: &str = "method,schedule,seed,k,epoch,primal,dual,gap,feas,dual_violation,time_ms";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TraceRecord {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.method,
            self.schedule.map(|s| s.tag()).unwrap_or(""),
            self.seed,
            self.k,
            self.epoch,
            self.primal,
            opt(self.dual),
            opt(self.gap),
            opt(self.feas),
            self.dual_violation,
            opt(self.time_ms),
        )
    }

    pub fn from_csv_row(row: &str, line: usize) -> Result<Self> {
        let err = |msg: String| Error::Parse { line, msg };
        let cells: Vec<&str> = row.split(',').collect();
        if cells.len() != 11 {
            return Err(err(format!("expected 11 cells, got {}", cells.len())));
        }
        let num = |i: usize| -> Result<f64> {
            cells[i]
                .parse()
                .map_err(|_| err(format!("bad number `{}` in column {}", cells[i], i + 1)))
        };
        let opt_num = |i: usize| -> Result<Option<f64>> {
            if cells[i].is_empty() {
                Ok(None)
            } else {
                num(i).map(Some)
            }
        };
        let int = |i: usize| -> Result<u64> {
            cells[i]
                .parse()
                .map_err(|_| err(format!("bad integer `{}` in column {}", cells[i], i + 1)))
        };
        Ok(TraceRecord {
            method: cells[0].parse()?,
            schedule: if cells[1].is_empty() {
                None
            } else {
                Some(cells[1].parse()?)
            },
            seed: int(2)?,
            k: int(3)? as usize,
            epoch: int(4)? as usize,
            primal: num(5)?,
            dual: opt_num(6)?,
            gap: opt_num(7)?,
            feas: opt_num(8)?,
            dual_violation: num(9)?,
            time_ms: opt_num(10)?,
        })
    }
}

/// Writes a header and one row per record.
pub fn write_csv(records: &[TraceRecord], mut out: impl std::io::Write) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in records {
        writeln!(out, "{}", r.to_csv_row())?;
    }
    Ok(())
}

pub fn read_csv(reader: impl std::io::BufRead) -> Result<Vec<TraceRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line.trim() != CSV_HEADER {
                return Err(Error::Parse {
                    line: 1,
                    msg: "unexpected header".into(),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        out.push(TraceRecord::from_csv_row(line.trim_end(), i + 1)?);
    }
    Ok(out)
}

/// Controls shared by every solver's run loop.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub epochs: usize,
    pub seed: u64,
    /// Epochs between checkpoints.
    pub cadence: usize,
    /// Also record a checkpoint at `k = 0`.
    pub include_initial: bool,
    /// Fill `time_ms`; off by default so traces are reproducible.
    pub timing: bool,
    /// Force `eta_k = 0` (no multiplier update).
    pub eta_zero: bool,
    /// Maintain the dual average.
    pub track_dual_average: bool,
}

impl RunOptions {
    pub fn new(epochs: usize, seed: u64) -> Self {
        RunOptions {
            epochs,
            seed,
            cadence: 1,
            include_initial: false,
            timing: false,
            eta_zero: false,
            track_dual_average: true,
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(param("epochs", "must be >= 1"));
        }
        if self.cadence == 0 {
            return Err(param("cadence", "must be >= 1"));
        }
        Ok(())
    }
}

/// Trace plus final iterates of a run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Vec<TraceRecord>,
    pub x: Vec<f64>,
    /// The dual point used for the gap (an average, or the last dual iterate
    /// for the baselines).
    pub y: Vec<f64>,
    /// Smallest `F` seen at a checkpoint, with its point.
    pub best_primal: f64,
    pub best_x: Vec<f64>,
}

/// Values measured at one point pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub primal: f64,
    pub dual: Option<f64>,
    pub gap: Option<f64>,
    pub dual_violation: f64,
}

/// `F(x)` and `G` at `y` mapped into `dom G`.
pub fn evaluate(spec: &ProblemSpec, x: &[f64], y: &[f64]) -> Result<Evaluation> {
    let primal = spec.primal_value(x)?;
    let raw = spec.dual_value(y)?;
    let Some(raw) = raw else {
        return Ok(Evaluation {
            primal,
            dual: None,
            gap: None,
            dual_violation: 0.0,
        });
    };
    let dual = if raw.is_finite() {
        Some(raw.value)
    } else {
        let restored = spec.restore_dual(y)?;
        spec.dual_value(&restored)?
            .filter(|g| g.is_finite())
            .map(|g| g.value)
    };
    Ok(Evaluation {
        primal,
        dual,
        gap: dual.map(|g| primal + g),
        dual_violation: raw.violation,
    })
}

/// `F(x)`.
pub fn primal_value(spec: &ProblemSpec, x: &[f64]) -> Result<f64> {
    spec.primal_value(x)
}

/// `G(y)` and the distance of `y` from `dom G`; `None` when `h` is nonzero.
pub fn dual_value(spec: &ProblemSpec, y: &[f64]) -> Result<Option<(f64, f64)>> {
    Ok(spec.dual_value(y)?.map(|c| (c.value, c.violation)))
}

/// Accumulates checkpoints for a run loop.
pub(crate) struct Recorder<'a> {
    spec: &'a ProblemSpec,
    method: Method,
    schedule: Option<ScheduleKind>,
    seed: u64,
    timing: Option<Instant>,
    pub trace: Vec<TraceRecord>,
    pub best_primal: f64,
    pub best_x: Vec<f64>,
}

impl<'a> Recorder<'a> {
    pub fn new(spec: &'a ProblemSpec, method: Method, schedule: Option<ScheduleKind>, opts: &RunOptions) -> Self {
        Recorder {
            spec,
            method,
            schedule,
            seed: opts.seed,
            timing: opts.timing.then(Instant::now),
            trace: Vec::new(),
            best_primal: f64::INFINITY,
            best_x: Vec::new(),
        }
    }

    pub fn record(&mut self, k: usize, epoch: usize, x: &[f64], y: &[f64], feas: Option<f64>) -> Result<()> {
        let time_ms = self.timing.map(|t| t.elapsed().as_secs_f64() * 1e3);
        let e = evaluate(self.spec, x, y)?;
        if e.primal.is_nan() || e.gap.is_some_and(f64::is_nan) {
            return Err(Error::Abort {
                k,
                reason: "objective evaluated to NaN".into(),
            });
        }
        if e.primal < self.best_primal {
            self.best_primal = e.primal;
            self.best_x = x.to_vec();
        }
        self.trace.push(TraceRecord {
            method: self.method,
            schedule: self.schedule,
            seed: self.seed,
            k,
            epoch,
            primal: e.primal,
            dual: e.dual,
            gap: e.gap,
            feas,
            dual_violation: e.dual_violation,
            time_ms,
        });
        Ok(())
    }

    pub fn finish(self, x: Vec<f64>, y: Vec<f64>) -> RunOutput {
        RunOutput {
            trace: self.trace,
            x,
            y,
            best_primal: self.best_primal,
            best_x: self.best_x,
        }
    }
}

pub(crate) fn check_finite(k: usize, what: &str, v: &[f64]) -> Result<()> {
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::Abort {
            k,
            reason: format!("{what}[{i}] is {}", v[i]),
        });
    }
    Ok(())
}

/// Least-squares fit of `log value` against `log k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub k_start: f64,
    pub k_end: f64,
    pub points: usize,
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in log space.
    pub residual: f64,
}

pub const MIN_FIT_POINTS: usize = 10;

/// Fits over the last `tail` fraction of the `log k` range.
pub fn fit_rate(points: &[(f64, f64)], tail: f64) -> Result<RateFit> {
    if !(tail > 0.0 && tail <= 1.0) {
        return Err(param("tail", format!("must lie in (0, 1], got {tail}")));
    }
    let mut pts: Vec<(f64, f64)> = points.iter().copied().filter(|(k, _)| *k > 0.0).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (Some(first), Some(last)) = (pts.first(), pts.last()) else {
        return Err(param("trace", "no points with k > 0"));
    };
    let (lo, hi) = (first.0.ln(), last.0.ln());
    let cut = hi - tail * (hi - lo);
    let window: Vec<(f64, f64)> = pts.into_iter().filter(|(k, _)| k.ln() >= cut - 1e-12).collect();
    if window.len() < MIN_FIT_POINTS {
        return Err(param(
            "trace",
            format!("need at least {MIN_FIT_POINTS} points in the window, got {}", window.len()),
        ));
    }
    if let Some((k, v)) = window.iter().find(|(_, v)| !(*v > 0.0)) {
        return Err(param("trace", format!("nonpositive value {v} at k = {k}")));
    }
    let n = window.len() as f64;
    let xs: Vec<f64> = window.iter().map(|(k, _)| k.ln()).collect();
    let ys: Vec<f64> = window.iter().map(|(_, v)| v.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(param("trace", "window spans a single k"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(RateFit {
        k_start: window[0].0,
        k_end: window[window.len() - 1].0,
        points: window.len(),
        slope,
        intercept,
        residual,
    })
}

/// Median of a nonempty slice; the mean of the middle pair for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Per-checkpoint median of a column across traces that share checkpoints.
/// Entries where any trace lacks a value are skipped.
pub fn median_curve(traces: &[Vec<TraceRecord>], column: impl Fn(&TraceRecord) -> Option<f64>) -> Vec<(f64, f64)> {
    let Some(first) = traces.first() else {
        return Vec::new();
    };
    (0..first.len())
        .filter_map(|i| {
            let vals: Option<Vec<f64>> = traces.iter().map(|t| t.get(i).and_then(&column)).collect();
            vals.map(|v| (first[i].k as f64, median(&v)))
        })
        .collect()
}

/// Best primal value found by long deterministic and semi-randomized runs,
/// lowered by a margin of `1e-12 (1 + |F|)`.
#[derive(Debug, Clone)]
pub struct Reference {
    pub f_ref: f64,
    pub x_ref: Vec<f64>,
}

pub const MIN_REFERENCE_BUDGET: usize = 10_000;

pub fn reference_solution(spec: &ProblemSpec, budget: usize) -> Result<Reference> {
    if budget < MIN_REFERENCE_BUDGET {
        return Err(param("budget", format!("must be >= {MIN_REFERENCE_BUDGET} epochs")));
    }
    let consts = spec.constants()?;
    let x0 = vec![0.0; spec.k.cols()];
    let y0 = vec![0.0; spec.k.rows()];
    let mut opts = RunOptions::new(budget, 0);
    opts.cadence = (budget / 100).max(1);

    let norm = consts.lbar.sqrt().max(f64::MIN_POSITIVE);
    let cfg = PdhgConfig {
        tau: 0.99 / norm,
        sigma: 0.99 / norm,
        theta: 1.0,
    };
    let pdhg = pdhg_run(spec, &cfg, &x0, &y0, &opts)?;

    let kind = ScheduleKind::S3;
    let schedule = Schedule::new(kind, None, auto_rho0(kind, &consts), &consts)?;
    let semi = srpd::run(spec, &schedule, &x0, &y0, &opts)?;

    let (best, x) = if semi.best_primal < pdhg.best_primal {
        (semi.best_primal, semi.best_x)
    } else {
        (pdhg.best_primal, pdhg.best_x)
    };
    Ok(Reference {
        f_ref: best - 1e-12 * (1.0 + best.abs()),
        x_ref: x,
    })
}

/// Which theorem's constant an overlay uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    /// Fully randomized, general convexity: `1/(tau0 k + 1 - tau0)`.
    Frpd,
    /// Semi-randomized, general convexity: `1/(tau0 k + 1 - tau0)`.
    Srpd,
    /// Semi-randomized, `f` strongly convex: `4/(tau0 k + 1 - tau0)^2`.
    SrpdStronglyConvex,
}

/// Inputs to the primal bound constant.
#[derive(Debug, Clone)]
pub struct BoundInputs<'a> {
    pub rho0: f64,
    pub x0: &'a [f64],
    pub y0: &'a [f64],
    pub x_star: &'a [f64],
    pub y_star: &'a [f64],
    pub f_star: f64,
}

fn weighted_sq(v: &[f64], part: &crate::blockmat::Partition, w: impl Fn(usize) -> f64) -> f64 {
    (0..part.count())
        .map(|b| w(b) * part.range(b).map(|c| v[c] * v[c]).sum::<f64>())
        .sum()
}

/// Numerator of the expected primal residual bound:
/// `E0^2 + (M_g + ||y*||) E0 sqrt(2/rho0)`, with `E0^2` per `kind`.
pub fn primal_bound_constant(
    spec: &ProblemSpec,
    consts: &ProblemConstants,
    kind: BoundKind,
    inp: &BoundInputs<'_>,
) -> Result<f64> {
    let m_g = consts
        .m_g
        .ok_or_else(|| param("m_g", "the primal bound needs the Lipschitz constant of g"))?;
    check_len("x0", spec.k.cols(), inp.x0.len())?;
    check_len("x*", spec.k.cols(), inp.x_star.len())?;
    check_len("y0", spec.k.rows(), inp.y0.len())?;
    check_len("y*", spec.k.rows(), inp.y_star.len())?;
    let cp = spec.k.col_partition();
    let rp = spec.k.row_partition();
    let dx: Vec<f64> = inp.x0.iter().zip(inp.x_star).map(|(a, b)| a - b).collect();
    let dy2: f64 = inp.y0.iter().zip(inp.y_star).map(|(a, b)| (a - b) * (a - b)).sum();
    let q = spec.q.probs();
    let x_norm = weighted_sq(&dx, cp, |j| spec.sigma[j] / q[j]);
    let f0 = spec.primal_value(inp.x0)? - inp.f_star;
    let (t0, rho0) = (consts.tau0, inp.rho0);
    let e0_sq = match kind {
        BoundKind::Frpd => {
            let kdx = spec.k.apply(&dx)?;
            let qh = spec.q_hat.probs();
            let k_norm = weighted_sq(&kdx, rp, |i| 1.0 / qh[i]);
            f0 + dy2 / rho0 + (consts.lh + 4.0 * rho0 * consts.lbar) * t0 / 2.0 * x_norm + 2.0 * t0 * rho0 * k_norm
        }
        BoundKind::Srpd => {
            let t0 = consts.tau0_primal;
            f0 + (2.0 * consts.lbar * rho0 + consts.lh) * t0 / 2.0 * x_norm + dy2 / rho0
        }
        BoundKind::SrpdStronglyConvex => {
            let t0 = consts.tau0_primal;
            f0 + t0 * (consts.lh + 2.0 * consts.lbar * rho0 + consts.mu_f) / 2.0 * x_norm + dy2 / rho0
        }
    };
    let y_norm = inp.y_star.iter().map(|v| v * v).sum::<f64>().sqrt();
    let e0 = e0_sq.max(0.0).sqrt();
    let base = e0_sq + (m_g + y_norm) * e0 * (2.0 / rho0).sqrt();
    Ok(match kind {
        BoundKind::SrpdStronglyConvex => 4.0 * base,
        _ => base,
    })
}

/// `constant / (tau0 k + 1 - tau0)^power` at each `k`.
pub fn bound_overlay(constant: f64, tau0: f64, ks: &[usize], power: i32) -> Vec<f64> {
    ks.iter()
        .map(|&k| constant / (tau0 * k as f64 + 1.0 - tau0).powi(power))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn power_law(c: f64, p: f64) -> Vec<(f64, f64)> {
        // three decades, log-spaced
        (0..200)
            .map(|i| {
                let k = 10f64.powf(i as f64 * 3.0 / 199.0);
                (k, c * k.powf(p))
            })
            .collect()
    }

    #[test]
    fn exact_power_laws() {
        assert_relative_eq!(fit_rate(&power_law(10.0, -1.0), 0.5).unwrap().slope, -1.0, epsilon = 1e-10);
        assert_relative_eq!(fit_rate(&power_law(5.0, -2.0), 0.5).unwrap().slope, -2.0, epsilon = 1e-10);
        assert_relative_eq!(fit_rate(&power_law(3.0, 0.0), 1.0).unwrap().slope, 0.0, epsilon = 1e-10);
    }

    #[test]
    fn fit_rejects_bad_windows() {
        let short: Vec<(f64, f64)> = (1..5).map(|k| (k as f64, 1.0)).collect();
        assert!(fit_rate(&short, 1.0).is_err());
        let mut bad = power_law(1.0, -1.0);
        bad.last_mut().unwrap().1 = 0.0;
        assert!(fit_rate(&bad, 0.5).is_err());
        assert!(fit_rate(&power_law(1.0, -1.0), 0.0).is_err());
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn overlay_algebra() {
        let tau0 = 0.25;
        // tau0 k + 1 - tau0 = 1 at k = 1
        assert_eq!(bound_overlay(7.0, tau0, &[1], 1), vec![7.0]);
        let ks: Vec<usize> = vec![1 << 20, 1 << 21];
        let ratio = (tau0 * 2097152.0 + 0.75) / (tau0 * 1048576.0 + 0.75);
        let c = bound_overlay(1.0, tau0, &ks, 1);
        assert_relative_eq!(c[0] / c[1], ratio, max_relative = 1e-12);
        let c = bound_overlay(1.0, tau0, &ks, 2);
        assert_relative_eq!(c[0] / c[1], ratio * ratio, max_relative = 1e-12);
    }

    #[test]
    fn csv_row_round_trip() {
        let rec = TraceRecord {
            method: Method::Frpd,
            schedule: Some(ScheduleKind::S2),
            seed: 7,
            k: 1024,
            epoch: 32,
            primal: 0.1 + 0.2,
            dual: Some(-0.25),
            gap: None,
            feas: Some(1e-300),
            dual_violation: 0.0,
            time_ms: None,
        };
        let row = rec.to_csv_row();
        assert_eq!(TraceRecord::from_csv_row(&row, 2).unwrap(), rec);
        assert!(TraceRecord::from_csv_row("frpd,s1,1", 3).is_err());
    }
}
