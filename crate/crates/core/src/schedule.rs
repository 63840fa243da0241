//! Non-stationary parameter schedules `(tau_k, rho_k, gamma_k, beta_k, eta_k)`
//! and a verifier for the admissibility inequalities they must satisfy.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::problem::{ProblemConstants, ProblemSpec};

/// Which solver a schedule drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// Fully randomized: primal and dual blocks both sampled.
    Frpd,
    /// Semi-randomized: full dual step, sampled primal block.
    Srpd,
}

/// The seven schedules.
///
/// | tag | solver | `tau_k` | `rho_k` | `beta_k` denominator | constraint |
/// |-----|--------|---------|---------|----------------------|------------|
/// | S1 | FRPD | `tau0/(tau0 k + 1)` | `rho0 tau0/tau_k` | `L^h + 4 Lbar rho_k` | `c tau0 = 1` |
/// | S2 | FRPD | `c tau0/(k + c)` | `rho0 tau0/tau_k` | `L^h + 4 Lbar rho_k` | `c tau0 > 1` |
/// | S3 | SRPD | `c tau0/(k + c)` | `rho0 tau0/tau_k` | `L^h + 2 Lbar rho_k` | `c >= 1`, `c tau0 >= 1` |
/// | S4 | SRPD | quadratic recursion | `rho0 tau0^2/tau_k^2` | `L^h + 2 Lbar rho_k` | `rho0 <= mu_f/(8 Lbar)` |
/// | S5 | SRPD | `c tau0/(k + c)` | `rho0 tau0^2/tau_k^2` | `L^h + 2 Lbar rho_k` | `c tau0 > 2`, cap as S4 |
/// | S6 | FRPD | quadratic recursion | `rho_{k-1}/(1 - tau_k)` | `L^h + 4 Lbar rho_k` | `rho0 <= min(mu_g, mu_f/Lbar)/8` |
/// | S7 | FRPD | `c tau0/(k + c)` | `rho0 tau0^2/tau_k^2` | `L^h + 4 Lbar rho_k` | `c tau0 > 2`, cap as S6 |
///
/// Every kind sets `eta_k = rho_k/2` and `gamma_k = 1/(4 rho_k)`; SRPD never
/// reads `gamma_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    S1,
    S2,
    S3,
    S4,
    S5,
    S6,
    S7,
}

impl ScheduleKind {
    pub const ALL: [ScheduleKind; 7] = [
        ScheduleKind::S1,
        ScheduleKind::S2,
        ScheduleKind::S3,
        ScheduleKind::S4,
        ScheduleKind::S5,
        ScheduleKind::S6,
        ScheduleKind::S7,
    ];

    pub fn family(self) -> Family {
        match self {
            ScheduleKind::S1 | ScheduleKind::S2 | ScheduleKind::S6 | ScheduleKind::S7 => Family::Frpd,
            _ => Family::Srpd,
        }
    }

    pub fn strongly_convex(self) -> bool {
        matches!(self, ScheduleKind::S4 | ScheduleKind::S5 | ScheduleKind::S6 | ScheduleKind::S7)
    }

    /// Coefficient of `Lbar rho_k` in `1/beta_k`.
    fn beta_factor(self) -> f64 {
        match self.family() {
            Family::Frpd => 4.0,
            Family::Srpd => 2.0,
        }
    }

    /// `c` chosen when the user asks for `auto`: `1/tau0` for the `O(1/k)`
    /// kinds, `2/tau0 + 1` for the small-o kinds.
    pub fn auto_c(self, tau0: f64) -> f64 {
        match self {
            ScheduleKind::S1 | ScheduleKind::S3 | ScheduleKind::S4 | ScheduleKind::S6 => 1.0 / tau0,
            _ => 2.0 / tau0 + 1.0,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            ScheduleKind::S1 => "s1",
            ScheduleKind::S2 => "s2",
            ScheduleKind::S3 => "s3",
            ScheduleKind::S4 => "s4",
            ScheduleKind::S5 => "s5",
            ScheduleKind::S6 => "s6",
            ScheduleKind::S7 => "s7",
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScheduleKind::ALL
            .into_iter()
            .find(|k| k.tag().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown schedule `{s}` (expected s1..s7)")))
    }
}

/// Parameters at iteration `k` together with their values at `k - 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamState {
    pub k: usize,
    pub tau: f64,
    pub rho: f64,
    pub gamma: f64,
    pub beta: f64,
    pub eta: f64,
    pub tau_prev: f64,
    pub rho_prev: f64,
    pub gamma_prev: f64,
    pub beta_prev: f64,
    pub eta_prev: f64,
}

/// A schedule bound to the problem constants it needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub c: f64,
    pub rho0: f64,
    pub tau0: f64,
    pub lbar: f64,
    pub lh: f64,
}

/// Largest admissible `rho0` for the strongly convex kinds.
pub fn rho0_cap(kind: ScheduleKind, consts: &ProblemConstants) -> Option<f64> {
    match kind {
        ScheduleKind::S4 | ScheduleKind::S5 => Some(consts.mu_f / (8.0 * consts.lbar)),
        ScheduleKind::S6 | ScheduleKind::S7 => Some(consts.mu_g.min(consts.mu_f / consts.lbar) / 8.0),
        _ => None,
    }
}

/// `rho0` chosen when the user asks for `auto`: `1/||K||_sigma` for the
/// general kinds, the cap for the strongly convex ones.
pub fn auto_rho0(kind: ScheduleKind, consts: &ProblemConstants) -> f64 {
    rho0_cap(kind, consts).unwrap_or_else(|| 1.0 / consts.lbar.sqrt())
}

/// `tau0` as seen by the given solver family.
pub fn tau0_for(kind: ScheduleKind, consts: &ProblemConstants) -> f64 {
    match kind.family() {
        Family::Frpd => consts.tau0,
        Family::Srpd => consts.tau0_primal,
    }
}

const CAP_RTOL: f64 = 1e-12;

impl Schedule {
    /// Validates the kind's constraint. `c = None` selects [`ScheduleKind::auto_c`].
    pub fn new(kind: ScheduleKind, c: Option<f64>, rho0: f64, consts: &ProblemConstants) -> Result<Self> {
        let tau0 = tau0_for(kind, consts);
        Self::from_parts(kind, c, rho0, tau0, consts.lbar, consts.lh, rho0_cap(kind, consts))
    }

    /// Like [`Schedule::new`] with explicit constants.
    pub fn from_parts(
        kind: ScheduleKind,
        c: Option<f64>,
        rho0: f64,
        tau0: f64,
        lbar: f64,
        lh: f64,
        cap: Option<f64>,
    ) -> Result<Self> {
        if !(tau0 > 0.0 && tau0 <= 1.0) {
            return Err(param("tau0", format!("must lie in (0, 1], got {tau0}")));
        }
        if !(rho0 > 0.0) || !rho0.is_finite() {
            return Err(param("rho0", format!("must be finite and > 0, got {rho0}")));
        }
        if !(lbar >= 0.0) || !(lh >= 0.0) {
            return Err(param("constants", "Lbar and L^h must be >= 0"));
        }
        let c = c.unwrap_or_else(|| kind.auto_c(tau0));
        if !(c > 0.0) || !c.is_finite() {
            return Err(param("c", format!("must be finite and > 0, got {c}")));
        }
        let ct = c * tau0;
        let bad_c = |need: &str| param("c", format!("{kind} needs {need}, got c tau0 = {ct}"));
        match kind {
            ScheduleKind::S1 if (ct - 1.0).abs() > 1e-12 => return Err(bad_c("c tau0 = 1")),
            ScheduleKind::S2 if !(c > 1.0 && ct > 1.0) => return Err(bad_c("c > 1 and c tau0 > 1")),
            ScheduleKind::S3 if !(c >= 1.0 && ct >= 1.0 - 1e-12) => return Err(bad_c("c >= 1 and c tau0 >= 1")),
            ScheduleKind::S5 | ScheduleKind::S7 if !(c > 2.0 && ct > 2.0) => {
                return Err(bad_c("c > 2 and c tau0 > 2"))
            }
            _ => {}
        }
        if kind.strongly_convex() {
            let cap = cap.ok_or_else(|| param("rho0", format!("{kind} needs strong convexity constants")))?;
            if !(cap > 0.0) {
                return Err(param("rho0", format!("{kind} needs positive strong convexity, cap is {cap}")));
            }
            if rho0 > cap * (1.0 + CAP_RTOL) {
                return Err(param("rho0", format!("{kind} needs rho0 <= {cap}, got {rho0}")));
            }
        }
        let c = if kind == ScheduleKind::S1 { 1.0 / tau0 } else { c };
        Ok(Schedule {
            kind,
            c,
            rho0,
            tau0,
            lbar,
            lh,
        })
    }

    fn finish(&self, k: usize, tau: f64, rho: f64, prev: Option<&ParamState>) -> ParamState {
        let gamma = 1.0 / (4.0 * rho);
        let beta = 1.0 / (self.lh + self.kind.beta_factor() * self.lbar * rho);
        let eta = rho / 2.0;
        let (tau_prev, rho_prev, gamma_prev, beta_prev, eta_prev) = match prev {
            Some(p) => (p.tau, p.rho, p.gamma, p.beta, p.eta),
            None => (tau, self.rho0, gamma, beta, eta),
        };
        ParamState {
            k,
            tau,
            rho,
            gamma,
            beta,
            eta,
            tau_prev,
            rho_prev,
            gamma_prev,
            beta_prev,
            eta_prev,
        }
    }

    /// Parameters at `k = 0`; lags equal the current values.
    pub fn initial(&self) -> ParamState {
        self.finish(0, self.tau0, self.rho0, None)
    }

    fn tau_explicit(&self, k: usize) -> f64 {
        let kf = k as f64;
        match self.kind {
            ScheduleKind::S1 => self.tau0 / (self.tau0 * kf + 1.0),
            _ => self.c * self.tau0 / (kf + self.c),
        }
    }

    /// Parameters at `prev.k + 1`.
    pub fn advance(&self, prev: &ParamState) -> ParamState {
        let k = prev.k + 1;
        let (tau, rho) = match self.kind {
            ScheduleKind::S1 => {
                let kf = k as f64;
                (self.tau0 / (self.tau0 * kf + 1.0), self.rho0 * (self.tau0 * kf + 1.0))
            }
            ScheduleKind::S2 | ScheduleKind::S3 => {
                let tau = self.tau_explicit(k);
                (tau, self.rho0 * self.tau0 / tau)
            }
            ScheduleKind::S5 | ScheduleKind::S7 => {
                let tau = self.tau_explicit(k);
                (tau, self.rho0 * self.tau0 * self.tau0 / (tau * tau))
            }
            ScheduleKind::S4 | ScheduleKind::S6 => {
                let t = prev.tau;
                // positive root of tau^2 = (1 - tau) t^2, written without
                // the cancellation in (t/2)(sqrt(t^2 + 4) - t)
                let tau = 2.0 * t / ((t * t + 4.0).sqrt() + t);
                let rho = if self.kind == ScheduleKind::S4 {
                    self.rho0 * self.tau0 * self.tau0 / (tau * tau)
                } else {
                    prev.rho / (1.0 - tau)
                };
                (tau, rho)
            }
        };
        self.finish(k, tau, rho, Some(prev))
    }

    /// Parameters at `k`, advancing from `k = 0`.
    pub fn at(&self, k: usize) -> ParamState {
        self.iter().nth(k).unwrap()
    }

    pub fn iter(&self) -> impl Iterator<Item = ParamState> + '_ {
        std::iter::successors(Some(self.initial()), move |p| Some(self.advance(p)))
    }
}

/// Closed forms `tau_k = tau0/(tau0 k + 1)`, `rho_k = rho0 (tau0 k + 1)` and
/// `omega_k = prod_{i<=k} (1 - tau_i) = (1 - tau0)/(tau0 k + 1)` for S1.
pub fn closed_form_check(kind: ScheduleKind, tau0: f64, rho0: f64, k: usize) -> Result<(f64, f64, f64)> {
    if kind != ScheduleKind::S1 {
        return Err(param("kind", format!("closed forms exist for s1 only, got {kind}")));
    }
    let d = tau0 * k as f64 + 1.0;
    Ok((tau0 / d, rho0 * d, (1.0 - tau0) / d))
}

/// Per-block data needed by the admissibility inequalities.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionContext {
    pub tau0: f64,
    pub lbar: f64,
    pub lh: f64,
    pub sigma: Vec<f64>,
    pub mu_f: Vec<f64>,
    pub q: Vec<f64>,
    pub mu_g: Vec<f64>,
    pub q_hat: Vec<f64>,
}

impl ConditionContext {
    /// Uniform laws over `m` dual and `n` primal blocks, `sigma = 1`, and the
    /// same modulus on every block.
    pub fn uniform(family: Family, m: usize, n: usize, lbar: f64, lh: f64, mu_f: f64, mu_g: f64) -> Self {
        let tau0 = match family {
            Family::Frpd => (1.0 / m as f64).min(1.0 / n as f64),
            Family::Srpd => 1.0 / n as f64,
        };
        ConditionContext {
            tau0,
            lbar,
            lh,
            sigma: vec![1.0; n],
            mu_f: vec![mu_f; n],
            q: vec![1.0 / n as f64; n],
            mu_g: vec![mu_g; m],
            q_hat: vec![1.0 / m as f64; m],
        }
    }

    pub fn from_spec(spec: &ProblemSpec, family: Family) -> Result<Self> {
        let consts = spec.constants()?;
        Ok(ConditionContext {
            tau0: match family {
                Family::Frpd => consts.tau0,
                Family::Srpd => consts.tau0_primal,
            },
            lbar: consts.lbar,
            lh: consts.lh,
            sigma: spec.sigma.clone(),
            mu_f: spec.f_blocks.iter().map(|f| f.mu()).collect(),
            q: spec.q.probs().to_vec(),
            mu_g: spec.g_blocks.iter().map(|g| g.mu()).collect(),
            q_hat: spec.q_hat.probs().to_vec(),
        })
    }

    /// Constants block matching this context, for [`Schedule::new`].
    pub fn constants(&self) -> ProblemConstants {
        let mu_f = self
            .mu_f
            .iter()
            .zip(&self.sigma)
            .map(|(m, s)| m / s)
            .fold(f64::INFINITY, f64::min);
        let mu_g = self.mu_g.iter().copied().fold(f64::INFINITY, f64::min);
        let qmin = self.q.iter().copied().fold(f64::INFINITY, f64::min);
        let qhmin = self.q_hat.iter().copied().fold(f64::INFINITY, f64::min);
        ProblemConstants {
            lbar: self.lbar,
            lbar_converged: true,
            lh: self.lh,
            mu_g,
            mu_f,
            tau0: qmin.min(qhmin),
            tau0_primal: qmin,
            n: self.q.len(),
            m: self.q_hat.len(),
            m_g: None,
            d_phi: None,
            d_g: None,
        }
    }
}

/// One evaluated inequality `lhs >= rhs`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionValue {
    /// 1-based position in the system; SRPD uses 1..=4 for (a)..(d).
    pub id: usize,
    /// Block index for the per-block inequalities.
    pub block: Option<usize>,
    pub lhs: f64,
    pub rhs: f64,
}

/// Slack below which an inequality counts as violated.
pub const SLACK_TOL: f64 = -1e-12;

impl ConditionValue {
    /// `(lhs - rhs) / max(1, |lhs|, |rhs|)`.
    pub fn slack(&self) -> f64 {
        (self.lhs - self.rhs) / 1f64.max(self.lhs.abs()).max(self.rhs.abs())
    }

    pub fn holds(&self) -> bool {
        self.slack() >= SLACK_TOL
    }
}

fn cv(id: usize, block: Option<usize>, lhs: f64, rhs: f64) -> ConditionValue {
    ConditionValue { id, block, lhs, rhs }
}

/// The six FRPD inequalities at one state.
pub fn frpd_conditions(ctx: &ConditionContext, p: &ParamState) -> Vec<ConditionValue> {
    let t0 = ctx.tau0;
    let omt = 1.0 - p.tau;
    let mut out = vec![
        cv(1, None, p.rho_prev, omt * p.rho),
        cv(2, None, p.eta * omt, p.eta_prev),
        cv(3, None, (p.rho - p.eta) / (2.0 * p.rho * p.rho), p.gamma),
        cv(
            4,
            None,
            (p.rho - p.eta) / (ctx.lh * (p.rho - p.eta) + 2.0 * ctx.lbar * p.rho * p.rho),
            p.beta,
        ),
    ];
    for (i, (mu, qh)) in ctx.mu_g.iter().zip(&ctx.q_hat).enumerate() {
        out.push(cv(
            5,
            Some(i),
            p.tau_prev * p.tau_prev / (t0 * p.gamma_prev) + mu * p.tau_prev,
            p.tau * p.tau / (t0 * p.gamma * omt) + (1.0 - qh) * mu * p.tau / omt,
        ));
    }
    for (j, ((mu, q), s)) in ctx.mu_f.iter().zip(&ctx.q).zip(&ctx.sigma).enumerate() {
        out.push(cv(
            6,
            Some(j),
            s * p.tau_prev * p.tau_prev / (t0 * p.beta_prev) + mu * p.tau_prev,
            s * p.tau * p.tau / (t0 * p.beta * omt) + (1.0 - q) * mu * p.tau / omt,
        ));
    }
    out
}

/// The four SRPD inequalities at one state, numbered (a)=1 .. (d)=4.
pub fn srpd_conditions(ctx: &ConditionContext, p: &ParamState) -> Vec<ConditionValue> {
    let t0 = ctx.tau0;
    let omt = 1.0 - p.tau;
    let mut out = Vec::with_capacity(ctx.q.len() + 3);
    for (j, ((mu, q), s)) in ctx.mu_f.iter().zip(&ctx.q).zip(&ctx.sigma).enumerate() {
        out.push(cv(
            1,
            Some(j),
            omt * p.tau_prev * (p.tau_prev * s / (t0 * p.beta_prev) + mu),
            p.tau * (p.tau * s / (t0 * p.beta) + (1.0 - q) * mu),
        ));
    }
    out.push(cv(2, None, omt * p.eta, p.eta_prev));
    // `1/beta - rho Lbar - L^h - eta rho Lbar/(rho - eta) >= 0`, with the
    // terms moved apart so the slack is relative to their scale
    out.push(cv(
        3,
        None,
        1.0 / p.beta,
        p.rho * ctx.lbar + ctx.lh + p.eta * p.rho * ctx.lbar / (p.rho - p.eta),
    ));
    out.push(cv(4, None, p.rho_prev, omt * p.rho));
    out
}

pub fn conditions(family: Family, ctx: &ConditionContext, p: &ParamState) -> Vec<ConditionValue> {
    match family {
        Family::Frpd => frpd_conditions(ctx, p),
        Family::Srpd => srpd_conditions(ctx, p),
    }
}

/// First failing inequality of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub k: usize,
    pub condition: ConditionValue,
}

/// Outcome of [`check_conditions`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    pub kind: ScheduleKind,
    pub horizon: usize,
    /// Smallest slack seen per condition id (index 0 is condition 1).
    pub min_slack: Vec<f64>,
    pub first_violation: Option<Violation>,
    /// Number of `(k, condition)` pairs that failed.
    pub violations: usize,
}

impl ConditionReport {
    pub fn passed(&self) -> bool {
        self.first_violation.is_none()
    }
}

/// Evaluates every inequality for `k = 1..=horizon`.
pub fn check_conditions(schedule: &Schedule, ctx: &ConditionContext, horizon: usize) -> ConditionReport {
    let family = schedule.kind.family();
    let ids = match family {
        Family::Frpd => 6,
        Family::Srpd => 4,
    };
    let mut min_slack = vec![f64::INFINITY; ids];
    let mut first_violation = None;
    let mut violations = 0;
    for p in schedule.iter().skip(1).take(horizon) {
        for c in conditions(family, ctx, &p) {
            let s = c.slack();
            let slot = &mut min_slack[c.id - 1];
            *slot = slot.min(s);
            if !c.holds() {
                violations += 1;
                first_violation.get_or_insert(Violation { k: p.k, condition: c });
            }
        }
    }
    ConditionReport {
        kind: schedule.kind,
        horizon,
        min_slack,
        first_violation,
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn sched(kind: ScheduleKind, c: Option<f64>, rho0: f64, tau0: f64, cap: Option<f64>) -> Schedule {
        Schedule::from_parts(kind, c, rho0, tau0, 1.0, 0.0, cap).unwrap()
    }

    #[test]
    fn s1_substitution() {
        let s = sched(ScheduleKind::S1, None, 1.0, 0.5, None);
        let p0 = s.initial();
        assert_eq!((p0.tau, p0.rho, p0.gamma, p0.eta), (0.5, 1.0, 0.25, 0.5));
        let p2 = s.at(2);
        assert_eq!((p2.tau, p2.rho, p2.gamma, p2.eta), (0.25, 2.0, 0.125, 1.0));
        assert_eq!(p2.rho_prev, 1.5);
    }

    #[test]
    fn s1_literal_form_agrees() {
        let tau0 = 1.0 / 7.0;
        let s = sched(ScheduleKind::S1, None, 0.3, tau0, None);
        let c = 1.0 / tau0;
        for p in s.iter().take(5000) {
            let kf = p.k as f64;
            assert_relative_eq!(p.tau, c * tau0 / (kf + c), max_relative = 1e-14);
            assert_relative_eq!(p.rho, 0.3 * tau0 / (c * tau0 / (kf + c)), max_relative = 1e-14);
        }
    }

    #[test]
    fn closed_forms() {
        let (t, r, w) = closed_form_check(ScheduleKind::S1, 0.5, 2.0, 3).unwrap();
        assert_relative_eq!(t, 0.2);
        assert_relative_eq!(r, 5.0);
        assert_relative_eq!(w, 0.2);
        assert_eq!(closed_form_check(ScheduleKind::S1, 0.5, 2.0, 0).unwrap(), (0.5, 2.0, 0.5));
        assert!(closed_form_check(ScheduleKind::S2, 0.5, 1.0, 1).is_err());
    }

    #[test]
    fn recursion_first_step() {
        let s = sched(ScheduleKind::S4, None, 0.1, 1.0, Some(0.125));
        assert_relative_eq!(s.at(1).tau, (5f64.sqrt() - 1.0) / 2.0, max_relative = 1e-15);
    }

    #[test]
    fn beta_definitions() {
        let consts = [(ScheduleKind::S1, 4.0), (ScheduleKind::S3, 2.0)];
        for (kind, factor) in consts {
            let s = Schedule::from_parts(kind, None, 0.7, 0.25, 3.0, 0.5, None).unwrap();
            for p in s.iter().take(50) {
                assert_relative_eq!(p.beta * (0.5 + factor * 3.0 * p.rho), 1.0, max_relative = 1e-15);
            }
        }
    }

    #[test]
    fn constraint_rejections() {
        let t0 = 0.25;
        assert!(Schedule::from_parts(ScheduleKind::S2, Some(4.0), 1.0, t0, 1.0, 0.0, None).is_err());
        assert!(Schedule::from_parts(ScheduleKind::S3, Some(2.0), 1.0, t0, 1.0, 0.0, None).is_err());
        assert!(Schedule::from_parts(ScheduleKind::S5, Some(8.0), 0.01, t0, 1.0, 0.0, Some(1.0)).is_err());
        assert!(Schedule::from_parts(ScheduleKind::S4, None, 0.2, t0, 1.0, 0.0, Some(0.1)).is_err());
        assert!(Schedule::from_parts(ScheduleKind::S4, None, 0.1, t0, 1.0, 0.0, Some(0.1)).is_ok());
        assert!(Schedule::from_parts(ScheduleKind::S6, None, 0.1, t0, 1.0, 0.0, None).is_err());
        assert!(Schedule::from_parts(ScheduleKind::S1, Some(3.0), 1.0, t0, 1.0, 0.0, None).is_err());
    }

    #[test]
    fn kinds_round_trip_through_strings() {
        for k in ScheduleKind::ALL {
            assert_eq!(k.tag().parse::<ScheduleKind>().unwrap(), k);
        }
        assert!("s9".parse::<ScheduleKind>().is_err());
    }

    #[test]
    fn equal_eta_and_rho_breaks_condition_three() {
        let ctx = ConditionContext::uniform(Family::Frpd, 2, 2, 1.0, 0.0, 0.0, 0.0);
        let mut p = sched(ScheduleKind::S1, None, 1.0, 0.5, None).at(3);
        p.eta = p.rho;
        let c3 = frpd_conditions(&ctx, &p).into_iter().find(|c| c.id == 3).unwrap();
        assert_eq!(c3.lhs, 0.0);
        assert!(!c3.holds());
    }

    fn sweep(kind: ScheduleKind, m: usize, n: usize, horizon: usize) -> ConditionReport {
        let (mu_f, mu_g) = if kind.strongly_convex() { (0.5, 0.5) } else { (0.0, 0.0) };
        let ctx = ConditionContext::uniform(kind.family(), m, n, 2.0, 0.3, mu_f, mu_g);
        let consts = ctx.constants();
        let rho0 = auto_rho0(kind, &consts);
        let s = Schedule::new(kind, None, rho0, &consts).unwrap();
        check_conditions(&s, &ctx, horizon)
    }

    #[test]
    fn tight_kinds_pass() {
        for kind in [ScheduleKind::S1, ScheduleKind::S3, ScheduleKind::S4, ScheduleKind::S6] {
            for (m, n) in [(1, 1), (4, 4), (32, 4), (4, 32)] {
                let r = sweep(kind, m, n, 2000);
                assert!(r.passed(), "{kind} m={m} n={n}: {:?}", r.first_violation);
            }
        }
    }

    #[test]
    fn loose_kinds_break_the_multiplier_inequality() {
        // with eta = rho/2, conditions 1 and 2 jointly force rho_k (1 - tau_k) =
        // rho_{k-1}, which the c tau0 > 1 variants do not satisfy
        for kind in [ScheduleKind::S2, ScheduleKind::S5, ScheduleKind::S7] {
            let r = sweep(kind, 4, 4, 100);
            let v = r.first_violation.expect("expected a violation");
            assert_eq!(v.condition.id, 2, "{kind}: {v:?}");
        }
    }

    proptest! {
        #[test]
        fn recursion_identity_and_sandwich(tau0 in 0.001..1.0f64) {
            let s = sched(ScheduleKind::S6, None, 1e-3, tau0, Some(1.0));
            for p in s.iter().skip(1).take(2000) {
                let lhs = 1.0 - p.tau;
                let rhs = p.tau * p.tau / (p.tau_prev * p.tau_prev);
                prop_assert!((lhs - rhs).abs() <= 1e-14 * lhs.max(1e-300));
                let kf = p.k as f64;
                prop_assert!(tau0 / (tau0 * kf + 1.0) <= p.tau * (1.0 + 1e-15));
                prop_assert!(p.tau <= 2.0 * tau0 / (tau0 * kf + 2.0) * (1.0 + 1e-15));
            }
        }

        #[test]
        fn monotone_and_products(kind_ix in 0usize..7, tau0 in 0.01..1.0f64) {
            let kind = ScheduleKind::ALL[kind_ix];
            let c = match kind {
                ScheduleKind::S2 => Some(1.5 / tau0 + 1.0),
                ScheduleKind::S5 | ScheduleKind::S7 => Some(2.5 / tau0 + 1.0),
                _ => None,
            };
            let s = sched(kind, c, 0.01, tau0, Some(1.0));
            let mut prev = s.initial();
            for p in s.iter().skip(1).take(500) {
                prop_assert!(p.tau < prev.tau && p.rho > prev.rho);
                prop_assert!(p.tau > 0.0 && p.tau <= 1.0);
                prop_assert_eq!(p.eta, p.rho / 2.0);
                match kind {
                    ScheduleKind::S1 | ScheduleKind::S2 | ScheduleKind::S3 => {
                        prop_assert!((p.rho * p.tau / (0.01 * tau0) - 1.0).abs() <= 1e-13);
                    }
                    ScheduleKind::S4 | ScheduleKind::S5 | ScheduleKind::S7 => {
                        prop_assert!((p.rho * p.tau * p.tau / (0.01 * tau0 * tau0) - 1.0).abs() <= 1e-13);
                    }
                    _ => {}
                }
                prev = p;
            }
        }
    }
}
