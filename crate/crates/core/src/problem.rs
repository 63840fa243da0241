//! Composite problems `min_x f(x) + h(x) + g(Kx)` with block-separable `f`
//! and `g`, and the constants that drive the parameter schedules.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::blockmat::{BlockMatrix, Partition};
use crate::data::Dataset;
use crate::error::{check_len, param, Error, Result};
use crate::prox::{ConjValue, ProxFn};

/// The smooth term `h`.
#[derive(Debug, Clone, PartialEq)]
pub enum SmoothTerm {
    Zero,
    /// `h(x) = (1/2) sum_c a_c x_c^2` with `a_c >= 0`.
    DiagQuadratic(Vec<f64>),
}

impl SmoothTerm {
    pub fn is_zero(&self) -> bool {
        match self {
            SmoothTerm::Zero => true,
            SmoothTerm::DiagQuadratic(a) => a.iter().all(|v| *v == 0.0),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            SmoothTerm::Zero => 0.0,
            SmoothTerm::DiagQuadratic(a) => 0.5 * a.iter().zip(x).map(|(a, v)| a * v * v).sum::<f64>(),
        }
    }

    /// Writes `grad_j h(x)` for the coordinates in `range` into `out`.
    pub(crate) fn block_gradient_into(&self, x: &[f64], range: std::ops::Range<usize>, out: &mut [f64]) {
        match self {
            SmoothTerm::Zero => out.iter_mut().for_each(|o| *o = 0.0),
            SmoothTerm::DiagQuadratic(a) => {
                for (o, c) in out.iter_mut().zip(range) {
                    *o = a[c] * x[c];
                }
            }
        }
    }

    /// Per-block Lipschitz constants `L_j^h` of the block gradients.
    pub fn block_lipschitz(&self, part: &Partition) -> Vec<f64> {
        match self {
            SmoothTerm::Zero => vec![0.0; part.count()],
            SmoothTerm::DiagQuadratic(a) => (0..part.count())
                .map(|j| part.range(j).map(|c| a[c]).fold(0.0, f64::max))
                .collect(),
        }
    }
}

/// Block sampling law with a cached sampler.
#[derive(Debug, Clone)]
pub struct SamplingLaw {
    probs: Vec<f64>,
    dist: WeightedIndex<f64>,
}

impl SamplingLaw {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(param("probabilities", "empty law"));
        }
        if probs.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
            return Err(param("probabilities", "all entries must be positive"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(param("probabilities", format!("must sum to 1, got {total}")));
        }
        let dist = WeightedIndex::new(&probs).map_err(|e| param("probabilities", e.to_string()))?;
        Ok(SamplingLaw { probs, dist })
    }

    pub fn uniform(count: usize) -> Result<Self> {
        Self::new(vec![1.0 / count as f64; count])
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn min(&self) -> f64 {
        self.probs.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        if self.probs.len() == 1 {
            0
        } else {
            self.dist.sample(rng)
        }
    }
}

/// Scalars derived from a problem, its weights `sigma` and sampling laws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemConstants {
    /// `||K diag(1/sqrt(sigma))||^2`.
    pub lbar: f64,
    /// False when the power iteration hit its cap.
    pub lbar_converged: bool,
    /// `max_j L_j^h / sigma_j`.
    pub lh: f64,
    /// `min_i mu_{g_i}`.
    pub mu_g: f64,
    /// `min_j mu_{f_j} / sigma_j`.
    pub mu_f: f64,
    /// `min(min q_hat, min q)`, used by the fully randomized method.
    pub tau0: f64,
    /// `min q`, used by the semi-randomized method.
    pub tau0_primal: f64,
    pub n: usize,
    pub m: usize,
    /// Lipschitz constant of `g`, when known.
    pub m_g: Option<f64>,
    /// Domain diameters of `phi` and `g`, when bounded.
    pub d_phi: Option<f64>,
    pub d_g: Option<f64>,
}

/// How the primal weights `sigma` are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SigmaRule {
    #[default]
    Ones,
    /// `sigma_j = ||K_j||^2`.
    ColumnBlockNorms,
}

/// `min_x f(x) + h(x) + g(Kx)`.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub k: BlockMatrix,
    pub f_blocks: Vec<ProxFn>,
    pub g_blocks: Vec<ProxFn>,
    pub h: SmoothTerm,
    pub sigma: Vec<f64>,
    pub q: SamplingLaw,
    pub q_hat: SamplingLaw,
    pub m_g: Option<f64>,
    pub d_phi: Option<f64>,
    pub d_g: Option<f64>,
}

impl ProblemSpec {
    /// Uniform sampling laws and `sigma = 1`. Block counts come from the
    /// partitions of `k`.
    pub fn new(k: BlockMatrix, f_blocks: Vec<ProxFn>, g_blocks: Vec<ProxFn>, h: SmoothTerm) -> Result<Self> {
        let n = k.col_partition().count();
        let m = k.row_partition().count();
        check_len("f blocks", n, f_blocks.len())?;
        check_len("g blocks", m, g_blocks.len())?;
        for (j, f) in f_blocks.iter().enumerate() {
            f.validate(k.col_partition().block_len(j))?;
        }
        for (i, g) in g_blocks.iter().enumerate() {
            g.validate(k.row_partition().block_len(i))?;
        }
        if let SmoothTerm::DiagQuadratic(a) = &h {
            check_len("smooth term diagonal", k.cols(), a.len())?;
            if a.iter().any(|v| !(*v >= 0.0)) {
                return Err(param("h", "diagonal must be nonnegative"));
            }
        }
        Ok(ProblemSpec {
            q: SamplingLaw::uniform(n)?,
            q_hat: SamplingLaw::uniform(m)?,
            sigma: vec![1.0; n],
            k,
            f_blocks,
            g_blocks,
            h,
            m_g: None,
            d_phi: None,
            d_g: None,
        })
    }

    pub fn with_sigma(mut self, sigma: Vec<f64>) -> Result<Self> {
        check_len("sigma", self.n(), sigma.len())?;
        if sigma.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(param("sigma", "weights must be positive"));
        }
        self.sigma = sigma;
        Ok(self)
    }

    pub fn with_sigma_rule(self, rule: SigmaRule) -> Result<Self> {
        match rule {
            SigmaRule::Ones => {
                let n = self.n();
                self.with_sigma(vec![1.0; n])
            }
            SigmaRule::ColumnBlockNorms => {
                let sigma = (0..self.n())
                    .map(|j| self.column_block_opnorm_sq(j).map(|v| v.max(f64::MIN_POSITIVE)))
                    .collect::<Result<Vec<_>>>()?;
                self.with_sigma(sigma)
            }
        }
    }

    fn column_block_opnorm_sq(&self, j: usize) -> Result<f64> {
        Ok(self.k.col_block_matrix(j)?.opnorm_sq()?.value)
    }

    pub fn with_sampling(mut self, q: SamplingLaw, q_hat: SamplingLaw) -> Result<Self> {
        check_len("primal sampling law", self.n(), q.probs().len())?;
        check_len("dual sampling law", self.m(), q_hat.probs().len())?;
        self.q = q;
        self.q_hat = q_hat;
        Ok(self)
    }

    /// Number of primal blocks.
    pub fn n(&self) -> usize {
        self.k.col_partition().count()
    }

    /// Number of dual blocks.
    pub fn m(&self) -> usize {
        self.k.row_partition().count()
    }

    pub fn constants(&self) -> Result<ProblemConstants> {
        let est = self.k.opnorm_sq_weighted(&self.sigma)?;
        let lj = self.h.block_lipschitz(self.k.col_partition());
        let lh = lj.iter().zip(&self.sigma).map(|(l, s)| l / s).fold(0.0, f64::max);
        let mu_g = self.g_blocks.iter().map(ProxFn::mu).fold(f64::INFINITY, f64::min);
        let mu_f = self
            .f_blocks
            .iter()
            .zip(&self.sigma)
            .map(|(f, s)| f.mu() / s)
            .fold(f64::INFINITY, f64::min);
        let tau0_primal = self.q.min();
        Ok(ProblemConstants {
            lbar: est.value,
            lbar_converged: est.converged,
            lh,
            mu_g,
            mu_f,
            tau0: tau0_primal.min(self.q_hat.min()),
            tau0_primal,
            n: self.n(),
            m: self.m(),
            m_g: self.m_g,
            d_phi: self.d_phi,
            d_g: self.d_g,
        })
    }

    /// `F(x) = f(x) + h(x) + g(Kx)`.
    pub fn primal_value(&self, x: &[f64]) -> Result<f64> {
        let kx = self.k.apply(x)?;
        Ok(self.primal_value_with(x, &kx))
    }

    /// `F(x)` given a precomputed `Kx`.
    pub(crate) fn primal_value_with(&self, x: &[f64], kx: &[f64]) -> f64 {
        let cp = self.k.col_partition();
        let rp = self.k.row_partition();
        let f: f64 = self.f_blocks.iter().enumerate().map(|(j, fj)| fj.value(&x[cp.range(j)])).sum();
        let g: f64 = self.g_blocks.iter().enumerate().map(|(i, gi)| gi.value(&kx[rp.range(i)])).sum();
        f + self.h.value(x) + g
    }

    /// `phi*(u)` with `phi = f + h`; available only when `h` vanishes.
    pub fn phi_conj(&self, u: &[f64]) -> Option<ConjValue> {
        if !self.h.is_zero() {
            return None;
        }
        let cp = self.k.col_partition();
        Some(sum_conj(self.f_blocks.iter().enumerate().map(|(j, fj)| fj.conj_value(&u[cp.range(j)]))))
    }

    /// `g*(y)`.
    pub fn g_conj(&self, y: &[f64]) -> ConjValue {
        let rp = self.k.row_partition();
        sum_conj(self.g_blocks.iter().enumerate().map(|(i, gi)| gi.conj_value(&y[rp.range(i)])))
    }

    /// `G(y) = phi*(-K^T y) + g*(y)`, or `None` when `phi*` is unavailable.
    pub fn dual_value(&self, y: &[f64]) -> Result<Option<ConjValue>> {
        let kty = self.k.apply_adjoint(y)?;
        let u: Vec<f64> = kty.iter().map(|v| -v).collect();
        Ok(self.phi_conj(&u).map(|p| {
            let g = self.g_conj(y);
            let violation = (p.violation * p.violation + g.violation * g.violation).sqrt();
            if p.is_finite() && g.is_finite() {
                ConjValue {
                    value: p.value + g.value,
                    violation: 0.0,
                }
            } else {
                ConjValue {
                    value: f64::INFINITY,
                    violation,
                }
            }
        }))
    }

    /// Maps `y` into `dom G`: projection onto `dom g*` block by block, then
    /// the largest shrink `s y`, `s` in `[0, 1]`, with `-K^T (s y)` in
    /// `dom phi*`. Both domains are convex and contain 0.
    pub fn restore_dual(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len("dual point", self.k.rows(), y.len())?;
        let rp = self.k.row_partition();
        let mut out = Vec::with_capacity(y.len());
        for (i, gi) in self.g_blocks.iter().enumerate() {
            out.extend(gi.project_conj_domain(&y[rp.range(i)]));
        }
        if !self.h.is_zero() {
            return Ok(out);
        }
        let kty = self.k.apply_adjoint(&out)?;
        let cp = self.k.col_partition();
        let u: Vec<f64> = kty.iter().map(|v| -v).collect();
        let s = self
            .f_blocks
            .iter()
            .enumerate()
            .map(|(j, fj)| fj.conj_domain_scale(&u[cp.range(j)]))
            .fold(1.0, f64::min);
        if s >= 1.0 {
            return Ok(out);
        }
        // K^T (s y) is recomputed by the caller, and cancellation in it can
        // exceed any fixed relative margin; shrink until the check passes
        let mut margin = 1e-12;
        while margin < 1e-2 {
            let scaled: Vec<f64> = out.iter().map(|v| v * s * (1.0 - margin)).collect();
            let u: Vec<f64> = self.k.apply_adjoint(&scaled)?.iter().map(|v| -v).collect();
            if self.phi_conj(&u).is_some_and(|c| c.is_finite()) {
                return Ok(scaled);
            }
            margin *= 16.0;
        }
        Ok(vec![0.0; out.len()])
    }
}

fn sum_conj(parts: impl Iterator<Item = ConjValue>) -> ConjValue {
    let mut value = 0.0;
    let mut viol2 = 0.0;
    for c in parts {
        value += c.value;
        viol2 += c.violation * c.violation;
    }
    if viol2 > 0.0 {
        ConjValue {
            value: f64::INFINITY,
            violation: viol2.sqrt(),
        }
    } else {
        ConjValue { value, violation: 0.0 }
    }
}

/// Soft-margin SVM without bias: `(1/N) sum_i max(0, 1 - b_i <a_i, x>) +
/// (lambda/2) ||x||^2`. Row `i` of `K` is `b_i a_i`.
pub fn build_svm(data: &Dataset, lambda: f64, n_blocks: usize, m_blocks: usize) -> Result<ProblemSpec> {
    if data.rows.is_empty() {
        return Err(param("data", "no samples"));
    }
    if !(lambda > 0.0) {
        return Err(param("lambda", format!("must be > 0, got {lambda}")));
    }
    let labels = data.labels.as_ref().ok_or_else(|| param("data", "labels required"))?;
    let mut triplets = Vec::new();
    for (i, (row, b)) in data.rows.iter().zip(labels).enumerate() {
        if *b != 1.0 && *b != -1.0 {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("label must be +1 or -1, got {b}"),
            });
        }
        triplets.extend(row.iter().map(|&(c, v)| (i, c, b * v)));
    }
    let d = data.rows.len();
    let k = BlockMatrix::from_triplets(d, data.n_features, triplets)?.with_even_blocks(m_blocks, n_blocks)?;
    let w = 1.0 / d as f64;
    ProblemSpec::new(
        k,
        vec![ProxFn::SqNorm { mu: lambda }; n_blocks],
        vec![ProxFn::Hinge { weight: w }; m_blocks],
        SmoothTerm::Zero,
    )
}

/// Least absolute deviations: `||Kx - b||_1 + lambda ||x||_1`.
pub fn build_lad(k: BlockMatrix, b: &[f64], lambda: f64, n_blocks: usize, m_blocks: usize) -> Result<ProblemSpec> {
    check_len("lad right-hand side", k.rows(), b.len())?;
    if !(lambda > 0.0) {
        return Err(param("lambda", format!("must be > 0, got {lambda}")));
    }
    let k = k.with_even_blocks(m_blocks, n_blocks)?;
    let rp = k.row_partition().clone();
    let g = (0..m_blocks).map(|i| ProxFn::l1_shifted(1.0, b[rp.range(i)].to_vec())).collect();
    ProblemSpec::new(k, vec![ProxFn::l1(lambda); n_blocks], g, SmoothTerm::Zero)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn two_sample() -> Dataset {
        Dataset {
            rows: vec![vec![(0, 1.0)], vec![(1, 1.0)]],
            labels: Some(vec![1.0, -1.0]),
            n_features: 2,
        }
    }

    #[test]
    fn svm_construction() {
        let spec = build_svm(&two_sample(), 1.0, 2, 2).unwrap();
        assert_eq!(spec.k.to_dense(), vec![vec![1.0, 0.0], vec![0.0, -1.0]]);
        let c = spec.constants().unwrap();
        assert_eq!(c.mu_f, 1.0);
        assert_eq!(c.tau0, 0.5);
        assert_relative_eq!(spec.primal_value(&[0.0, 0.0]).unwrap(), 1.0);
        let bad = Dataset {
            labels: Some(vec![1.0, 0.0]),
            ..two_sample()
        };
        assert!(build_svm(&bad, 1.0, 1, 1).is_err());
        assert!(build_svm(&two_sample(), 0.0, 1, 1).is_err());
    }

    #[test]
    fn svm_matches_monolithic_formula() {
        let data = Dataset {
            rows: vec![vec![(0, 0.5), (2, -1.0)], vec![(1, 2.0)], vec![(0, 1.0), (1, 1.0), (2, 1.0)]],
            labels: Some(vec![1.0, -1.0, 1.0]),
            n_features: 3,
        };
        let lambda = 0.3;
        let spec = build_svm(&data, lambda, 2, 3).unwrap();
        let x = [0.2, -0.7, 0.4];
        let mut loss = 0.0;
        for (row, b) in data.rows.iter().zip(data.labels.as_ref().unwrap()) {
            let dot: f64 = row.iter().map(|(c, v)| v * x[*c]).sum();
            loss += (1.0 - b * dot).max(0.0);
        }
        let expect = loss / 3.0 + 0.5 * lambda * x.iter().map(|v| v * v).sum::<f64>();
        assert_relative_eq!(spec.primal_value(&x).unwrap(), expect, max_relative = 1e-12);
    }

    #[test]
    fn lad_values() {
        let k = BlockMatrix::identity(2).unwrap();
        let spec = build_lad(k.clone(), &[1.0, -1.0], 0.5, 2, 2).unwrap();
        assert_relative_eq!(spec.primal_value(&[0.0, 0.0]).unwrap(), 2.0);
        assert_relative_eq!(spec.primal_value(&[1.0, 0.0]).unwrap(), 1.5);
        assert!(build_lad(k, &[1.0, -1.0], 0.0, 1, 1).is_err());
    }

    #[test]
    fn uniform_tau0() {
        let k = BlockMatrix::identity(12).unwrap();
        let spec = build_lad(k, &[0.0; 12], 1.0, 4, 3).unwrap();
        let c = spec.constants().unwrap();
        assert_eq!(c.tau0, 0.25);
        assert_eq!(c.tau0_primal, 0.25);
        let k = BlockMatrix::identity(12).unwrap();
        let spec = build_lad(k, &[0.0; 12], 1.0, 3, 6).unwrap();
        let c = spec.constants().unwrap();
        assert_relative_eq!(c.tau0, 1.0 / 6.0);
        assert_relative_eq!(c.tau0_primal, 1.0 / 3.0);
    }

    #[test]
    fn diagonal_lbar() {
        let k = BlockMatrix::from_dense(&[vec![3.0, 0.0], vec![0.0, 4.0]]).unwrap();
        let spec = build_lad(k, &[0.0, 0.0], 1.0, 2, 2).unwrap();
        assert_relative_eq!(spec.constants().unwrap().lbar, 16.0, max_relative = 1e-12);
        let spec = spec.with_sigma_rule(SigmaRule::ColumnBlockNorms).unwrap();
        assert_eq!(spec.sigma, vec![9.0, 16.0]);
        assert_relative_eq!(spec.constants().unwrap().lbar, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn dual_at_zero_and_outside() {
        let spec = build_svm(&two_sample(), 1.0, 1, 1).unwrap();
        assert_eq!(spec.dual_value(&[0.0, 0.0]).unwrap().unwrap().value, 0.0);
        let k = BlockMatrix::identity(2).unwrap();
        let lad = build_lad(k, &[1.0, 1.0], 0.5, 1, 1).unwrap();
        let g = lad.dual_value(&[2.0, 0.0]).unwrap().unwrap();
        assert!(g.value.is_infinite());
        assert!(g.violation >= 1.0);
    }

    #[test]
    fn restored_dual_is_feasible_and_weakly_dual() {
        let k = BlockMatrix::from_dense(&[vec![1.0, 2.0, 0.0], vec![0.0, -1.0, 3.0], vec![1.0, 1.0, 1.0]]).unwrap();
        let lad = build_lad(k, &[0.5, -1.0, 2.0], 0.2, 3, 3).unwrap();
        let y = lad.restore_dual(&[3.0, -0.4, 0.9]).unwrap();
        let g = lad.dual_value(&y).unwrap().unwrap();
        assert!(g.is_finite(), "{g:?}");
        for x in [[0.0, 0.0, 0.0], [0.3, -0.2, 0.7], [1.0, 1.0, 1.0]] {
            assert!(lad.primal_value(&x).unwrap() + g.value >= -1e-12);
        }
    }

    #[test]
    fn smooth_term_blocks() {
        let h = SmoothTerm::DiagQuadratic(vec![1.0, 3.0, 2.0]);
        let part = Partition::even(3, 2).unwrap();
        assert_eq!(h.block_lipschitz(&part), vec![3.0, 2.0]);
        let mut g = [0.0; 2];
        h.block_gradient_into(&[1.0, 1.0, 2.0], part.range(0), &mut g);
        assert_eq!(g, [1.0, 3.0]);
        assert_relative_eq!(h.value(&[1.0, 1.0, 1.0]), 3.0);
    }

    #[test]
    fn sampling_law_rejects_bad_input() {
        assert!(SamplingLaw::new(vec![0.5, 0.6]).is_err());
        assert!(SamplingLaw::new(vec![1.0, 0.0]).is_err());
        assert!(SamplingLaw::new(vec![]).is_err());
        assert_eq!(SamplingLaw::uniform(4).unwrap().min(), 0.25);
    }
}
