//! Closed-form proximal operators and Fenchel conjugates of the block
//! functions `f_j` and `g_i`.
//!
//! Every kind is separable across coordinates, so a block function of
//! dimension `b` is the coordinate-wise sum of a scalar function.

use crate::error::{check_len, param, Result};

/// A convex, closed, proper block function with a closed-form prox.
#[derive(Debug, Clone, PartialEq)]
pub enum ProxFn {
    /// `0`.
    Zero,
    /// `(mu/2) ||x||^2`, `mu >= 0`.
    SqNorm { mu: f64 },
    /// `weight * ||x - shift||_1`. An empty `shift` means zero.
    L1 { weight: f64, shift: Vec<f64> },
    /// `weight * sum max(0, 1 - x_i)`, `weight > 0`.
    Hinge { weight: f64 },
    /// Indicator of `[lo, hi]^b`.
    BoxIndicator { lo: f64, hi: f64 },
    /// `base(x) + (mu/2) ||x||^2`, `mu > 0`.
    WithQuadratic { base: Box<ProxFn>, mu: f64 },
}

/// A conjugate evaluation. `value` is `+inf` outside the conjugate domain and
/// `violation` is then the Euclidean distance to that domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConjValue {
    pub value: f64,
    pub violation: f64,
}

impl ConjValue {
    fn finite(value: f64) -> Self {
        ConjValue {
            value,
            violation: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
    }
}

fn soft(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

fn hinge_prox(z: f64, s: f64, w: f64) -> f64 {
    if z < 1.0 - s * w {
        z + s * w
    } else if z <= 1.0 {
        1.0
    } else {
        z
    }
}

fn sq(x: f64) -> f64 {
    x * x
}

impl ProxFn {
    pub fn l1(weight: f64) -> Self {
        ProxFn::L1 {
            weight,
            shift: Vec::new(),
        }
    }

    pub fn l1_shifted(weight: f64, shift: Vec<f64>) -> Self {
        ProxFn::L1 { weight, shift }
    }

    /// Checks parameter ranges and, for shifted kinds, the block dimension.
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            ProxFn::Zero => Ok(()),
            ProxFn::SqNorm { mu } => {
                if !(*mu >= 0.0) || !mu.is_finite() {
                    return Err(param("mu", format!("must be finite and >= 0, got {mu}")));
                }
                Ok(())
            }
            ProxFn::L1 { weight, shift } => {
                if !(*weight >= 0.0) || !weight.is_finite() {
                    return Err(param("weight", format!("must be finite and >= 0, got {weight}")));
                }
                if !shift.is_empty() {
                    check_len("l1 shift", dim, shift.len())?;
                }
                Ok(())
            }
            ProxFn::Hinge { weight } => {
                if !(*weight > 0.0) || !weight.is_finite() {
                    return Err(param("weight", format!("must be finite and > 0, got {weight}")));
                }
                Ok(())
            }
            ProxFn::BoxIndicator { lo, hi } => {
                if !(lo <= hi) {
                    return Err(param("box", format!("need lo <= hi, got [{lo}, {hi}]")));
                }
                Ok(())
            }
            ProxFn::WithQuadratic { base, mu } => {
                if !(*mu > 0.0) || !mu.is_finite() {
                    return Err(param("mu", format!("must be finite and > 0, got {mu}")));
                }
                base.validate(dim)
            }
        }
    }

    /// Strong convexity modulus.
    pub fn mu(&self) -> f64 {
        match self {
            ProxFn::SqNorm { mu } => *mu,
            ProxFn::WithQuadratic { base, mu } => base.mu() + mu,
            _ => 0.0,
        }
    }

    fn shift_at(shift: &[f64], i: usize) -> f64 {
        if shift.is_empty() {
            0.0
        } else {
            shift[i]
        }
    }

    /// Function value; `+inf` outside the domain of an indicator.
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            ProxFn::Zero => 0.0,
            ProxFn::SqNorm { mu } => 0.5 * mu * x.iter().map(|v| v * v).sum::<f64>(),
            ProxFn::L1 { weight, shift } => {
                weight
                    * x.iter()
                        .enumerate()
                        .map(|(i, v)| (v - Self::shift_at(shift, i)).abs())
                        .sum::<f64>()
            }
            ProxFn::Hinge { weight } => weight * x.iter().map(|v| (1.0 - v).max(0.0)).sum::<f64>(),
            ProxFn::BoxIndicator { lo, hi } => {
                if x.iter().all(|v| lo <= v && v <= hi) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            ProxFn::WithQuadratic { base, mu } => {
                base.value(x) + 0.5 * mu * x.iter().map(|v| v * v).sum::<f64>()
            }
        }
    }

    /// `argmin_u value(u) + ||u - z||^2 / (2 step)`.
    pub fn prox(&self, z: &[f64], step: f64) -> Result<Vec<f64>> {
        if !(step >= 0.0) || !step.is_finite() {
            return Err(param("step", format!("must be finite and >= 0, got {step}")));
        }
        let mut out = vec![0.0; z.len()];
        self.prox_into(z, step, &mut out);
        Ok(out)
    }

    /// Unchecked prox; `out` and `z` have equal length and `step >= 0`.
    pub(crate) fn prox_into(&self, z: &[f64], step: f64, out: &mut [f64]) {
        match self {
            ProxFn::Zero => out.copy_from_slice(z),
            ProxFn::SqNorm { mu } => {
                let d = 1.0 + step * mu;
                for (o, v) in out.iter_mut().zip(z) {
                    *o = v / d;
                }
            }
            ProxFn::L1 { weight, shift } => {
                let t = step * weight;
                for (i, (o, v)) in out.iter_mut().zip(z).enumerate() {
                    let b = Self::shift_at(shift, i);
                    *o = b + soft(v - b, t);
                }
            }
            ProxFn::Hinge { weight } => {
                for (o, v) in out.iter_mut().zip(z) {
                    *o = hinge_prox(*v, step, *weight);
                }
            }
            ProxFn::BoxIndicator { lo, hi } => {
                for (o, v) in out.iter_mut().zip(z) {
                    *o = v.clamp(*lo, *hi);
                }
            }
            ProxFn::WithQuadratic { base, mu } => {
                let d = 1.0 + step * mu;
                let scaled: Vec<f64> = z.iter().map(|v| v / d).collect();
                base.prox_into(&scaled, step / d, out);
            }
        }
    }

    /// `prox_{rho g*}(z) = z - rho prox_{g/rho}(z/rho)`.
    pub fn prox_conjugate(&self, z: &[f64], rho: f64) -> Result<Vec<f64>> {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(param("rho", format!("must be finite and > 0, got {rho}")));
        }
        let mut out = vec![0.0; z.len()];
        self.prox_conjugate_into(z, rho, &mut out);
        Ok(out)
    }

    pub(crate) fn prox_conjugate_into(&self, z: &[f64], rho: f64, out: &mut [f64]) {
        let scaled: Vec<f64> = z.iter().map(|v| v / rho).collect();
        self.prox_into(&scaled, 1.0 / rho, out);
        for (o, v) in out.iter_mut().zip(z) {
            *o = v - rho * *o;
        }
        // the Moreau form can land outside dom g* by rounding
        self.project_conj_domain_in_place(out);
    }

    /// Fenchel conjugate `sup_x <v, x> - value(x)`.
    pub fn conj_value(&self, v: &[f64]) -> ConjValue {
        match self {
            ProxFn::Zero => Self::zero_conj(v),
            ProxFn::SqNorm { mu } => {
                if *mu == 0.0 {
                    Self::zero_conj(v)
                } else {
                    ConjValue::finite(v.iter().map(|x| x * x).sum::<f64>() / (2.0 * mu))
                }
            }
            ProxFn::L1 { weight, shift } => {
                let violation = v.iter().map(|x| sq((x.abs() - weight).max(0.0))).sum::<f64>().sqrt();
                if violation > 0.0 {
                    return ConjValue {
                        value: f64::INFINITY,
                        violation,
                    };
                }
                ConjValue::finite(
                    v.iter()
                        .enumerate()
                        .map(|(i, x)| x * Self::shift_at(shift, i))
                        .sum(),
                )
            }
            ProxFn::Hinge { weight } => {
                let violation = v
                    .iter()
                    .map(|x| sq(x.max(0.0) + (-weight - x).max(0.0)))
                    .sum::<f64>()
                    .sqrt();
                if violation > 0.0 {
                    return ConjValue {
                        value: f64::INFINITY,
                        violation,
                    };
                }
                ConjValue::finite(v.iter().sum())
            }
            ProxFn::BoxIndicator { lo, hi } => {
                let mut value = 0.0;
                let mut violation = 0.0;
                for x in v {
                    // support function of [lo, hi]; an infinite side needs the
                    // matching sign of x to vanish
                    let term = if *x > 0.0 {
                        x * hi
                    } else if *x < 0.0 {
                        x * lo
                    } else {
                        0.0
                    };
                    if !term.is_finite() {
                        violation += x * x;
                    }
                    value += term;
                }
                if violation > 0.0 {
                    return ConjValue {
                        value: f64::INFINITY,
                        violation: violation.sqrt(),
                    };
                }
                ConjValue::finite(value)
            }
            ProxFn::WithQuadratic { base, mu } => {
                // Moreau envelope of base* with parameter mu
                let mut u = vec![0.0; v.len()];
                base.prox_conjugate_into(v, *mu, &mut u);
                let b = base.conj_value(&u).value;
                let d: f64 = v.iter().zip(&u).map(|(a, c)| sq(a - c)).sum();
                ConjValue::finite(b + d / (2.0 * mu))
            }
        }
    }

    fn zero_conj(v: &[f64]) -> ConjValue {
        let violation = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if violation > 0.0 {
            ConjValue {
                value: f64::INFINITY,
                violation,
            }
        } else {
            ConjValue::finite(0.0)
        }
    }

    /// Euclidean projection onto the closure of the conjugate domain.
    pub fn project_conj_domain(&self, v: &[f64]) -> Vec<f64> {
        let mut out = v.to_vec();
        self.project_conj_domain_in_place(&mut out);
        out
    }

    fn project_conj_domain_in_place(&self, v: &mut [f64]) {
        match self {
            ProxFn::Zero => v.fill(0.0),
            ProxFn::SqNorm { mu } if *mu == 0.0 => v.fill(0.0),
            ProxFn::L1 { weight, .. } => v.iter_mut().for_each(|x| *x = x.clamp(-weight, *weight)),
            ProxFn::Hinge { weight } => v.iter_mut().for_each(|x| *x = x.clamp(-weight, 0.0)),
            ProxFn::BoxIndicator { lo, hi } => {
                for x in v.iter_mut() {
                    let pos_ok = hi.is_finite() || *x <= 0.0;
                    let neg_ok = lo.is_finite() || *x >= 0.0;
                    if !(pos_ok && neg_ok) {
                        *x = 0.0;
                    }
                }
            }
            _ => {}
        }
    }

    /// Largest `s` in `[0, 1]` with `s v` in the conjugate domain. Every
    /// conjugate domain here is convex and contains 0.
    pub fn conj_domain_scale(&self, v: &[f64]) -> f64 {
        let cap = |bound: f64, x: f64| if x.abs() <= bound { 1.0 } else { bound / x.abs() };
        match self {
            ProxFn::Zero => Self::zero_scale(v),
            ProxFn::SqNorm { mu } if *mu == 0.0 => Self::zero_scale(v),
            ProxFn::L1 { weight, .. } => v.iter().fold(1.0, |s, x| s.min(cap(*weight, *x))),
            ProxFn::Hinge { weight } => v.iter().fold(1.0, |s, x| {
                if *x > 0.0 {
                    0.0
                } else {
                    s.min(cap(*weight, *x))
                }
            }),
            ProxFn::BoxIndicator { lo, hi } => {
                let bad = v
                    .iter()
                    .any(|x| (*x > 0.0 && !hi.is_finite()) || (*x < 0.0 && !lo.is_finite()));
                if bad {
                    0.0
                } else {
                    1.0
                }
            }
            _ => 1.0,
        }
    }

    fn zero_scale(v: &[f64]) -> f64 {
        if v.iter().all(|x| *x == 0.0) {
            1.0
        } else {
            0.0
        }
    }

    /// Whether `value(x)` is finite.
    pub fn in_domain(&self, x: &[f64]) -> bool {
        self.value(x).is_finite()
    }
}
