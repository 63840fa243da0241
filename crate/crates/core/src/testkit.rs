//! Small problem builders shared by the solver unit tests.

use rand::Rng;

use crate::blockmat::BlockMatrix;
use crate::data::{rng_for, DATA_STREAM};
use crate::problem::{ProblemSpec, SmoothTerm};
use crate::prox::ProxFn;

/// Random dense `d x p` matrix with entries in `[-1, 1]`.
pub fn random_matrix(d: usize, p: usize, seed: u64) -> BlockMatrix {
    let mut rng = rng_for(seed, DATA_STREAM);
    let rows: Vec<Vec<f64>> = (0..d)
        .map(|_| (0..p).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    BlockMatrix::from_dense(&rows).unwrap()
}

/// `f_j = ||x_j||^2/2`, `g_i = ||r_i - b_i||_1` with `b = K x*`,
/// `x* = -K^T y*` and `|y*| < 1`, so `(x*, y*)` is a saddle point.
pub fn saddle_instance(d: usize, p: usize, m: usize, n: usize, seed: u64) -> (ProblemSpec, Vec<f64>, Vec<f64>) {
    let k = random_matrix(d, p, seed).with_even_blocks(m, n).unwrap();
    let mut rng = rng_for(seed, 7);
    let y_star: Vec<f64> = (0..d).map(|_| rng.random_range(-0.8..0.8)).collect();
    let x_star: Vec<f64> = k.apply_adjoint(&y_star).unwrap().iter().map(|v| -v).collect();
    let b = k.apply(&x_star).unwrap();
    let rp = k.row_partition().clone();
    let g = (0..m).map(|i| ProxFn::l1_shifted(1.0, b[rp.range(i)].to_vec())).collect();
    let spec = ProblemSpec::new(k, vec![ProxFn::SqNorm { mu: 1.0 }; n], g, SmoothTerm::Zero).unwrap();
    (spec, x_star, y_star)
}

/// One-dimensional problem `f(x) + g(x)` with `K = 1`.
pub fn scalar(f: ProxFn, g: ProxFn) -> ProblemSpec {
    ProblemSpec::new(BlockMatrix::identity(1).unwrap(), vec![f], vec![g], SmoothTerm::Zero).unwrap()
}

/// Random LAD-type problem with a diagonal quadratic `h`, so every term of
/// the iteration is exercised.
pub fn mixed_instance(d: usize, p: usize, m: usize, n: usize, seed: u64) -> ProblemSpec {
    let k = random_matrix(d, p, seed).with_even_blocks(m, n).unwrap();
    let mut rng = rng_for(seed, 9);
    let b: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let diag: Vec<f64> = (0..p).map(|_| rng.random_range(0.1..2.0)).collect();
    let rp = k.row_partition().clone();
    let g = (0..m).map(|i| ProxFn::l1_shifted(1.0, b[rp.range(i)].to_vec())).collect();
    ProblemSpec::new(k, vec![ProxFn::l1(0.1); n], g, SmoothTerm::DiagQuadratic(diag)).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Shift `b` of `g` and diagonal of `h` for a [`mixed_instance`].
pub fn mixed_parts(spec: &ProblemSpec) -> (Vec<f64>, Vec<f64>) {
    let b = spec
        .g_blocks
        .iter()
        .flat_map(|g| match g {
            ProxFn::L1 { shift, .. } => shift.clone(),
            _ => panic!("not a mixed instance"),
        })
        .collect();
    let SmoothTerm::DiagQuadratic(diag) = &spec.h else {
        panic!("not a mixed instance")
    };
    (b, diag.clone())
}
