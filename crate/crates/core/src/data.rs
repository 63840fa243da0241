//! Dataset ingestion, synthetic instance generation and instance files.
//!
//! All randomness comes from ChaCha8 keyed by a `u64` seed, with one stream
//! per purpose so data and solver draws never share a sequence.

use std::io::{BufRead, Write};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::blockmat::{BlockMatrix, Partition};
use crate::error::{param, Error, Result};

/// Stream id for data generation.
pub const DATA_STREAM: u64 = 0;
/// Stream id for solver sampling.
pub const SOLVER_STREAM: u64 = 1;

/// Seeded generator on a given stream.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Sparse labelled rows with 0-based feature indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `(feature, value)` pairs, strictly increasing in feature.
    pub rows: Vec<Vec<(usize, f64)>>,
    pub labels: Option<Vec<f64>>,
    pub n_features: usize,
}

impl Dataset {
    pub fn n_samples(&self) -> usize {
        self.rows.len()
    }
}

/// Parses LIBSVM text: `label idx:val idx:val ...` with 1-based indices and
/// `#` comments. The feature count is the largest index seen unless given.
pub fn parse_libsvm(reader: impl BufRead, n_features: Option<usize>) -> Result<Dataset> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut max_index = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { line: lineno, msg };
        let mut tokens = content.split_whitespace();
        let label_tok = tokens.next().unwrap();
        let label: f64 = label_tok
            .parse()
            .map_err(|_| err(format!("bad label `{label_tok}`")))?;
        let mut row: Vec<(usize, f64)> = Vec::new();
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| err(format!("expected index:value, got `{tok}`")))?;
            let idx: usize = idx.parse().map_err(|_| err(format!("bad index in `{tok}`")))?;
            if idx == 0 {
                return Err(err("indices are 1-based".into()));
            }
            let val: f64 = val.parse().map_err(|_| err(format!("bad value in `{tok}`")))?;
            if !val.is_finite() {
                return Err(err(format!("non-finite value in `{tok}`")));
            }
            if let Some(&(prev, _)) = row.last() {
                if idx - 1 <= prev {
                    return Err(err(format!("index {idx} not increasing")));
                }
            }
            max_index = max_index.max(idx);
            row.push((idx - 1, val));
        }
        rows.push(row);
        labels.push(label);
    }
    let n_features = match n_features {
        Some(n) if n < max_index => {
            return Err(param("n_features", format!("{n} is below the largest index {max_index}")));
        }
        Some(n) => n,
        None => max_index,
    };
    Ok(Dataset {
        rows,
        labels: Some(labels),
        n_features,
    })
}

/// Writes LIBSVM text. Values use the shortest round-trip representation.
pub fn write_libsvm(data: &Dataset, mut out: impl Write) -> Result<()> {
    for (i, row) in data.rows.iter().enumerate() {
        let label = data.labels.as_ref().map_or(0.0, |l| l[i]);
        write!(out, "{label}")?;
        for (c, v) in row {
            write!(out, " {}:{v}", c + 1)?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Contiguous near-equal blocks; see [`Partition::even`].
pub fn partition(dim: usize, n_blocks: usize) -> Result<Partition> {
    Partition::even(dim, n_blocks)
}

/// Draw from Laplace(0, 1) by inverting the CDF.
pub fn laplace<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random::<f64>() - 0.5;
        if u > -0.5 {
            return -u.signum() * (1.0 - 2.0 * u.abs()).ln();
        }
    }
}

/// Recipe for a synthetic least-absolute-deviations instance.
#[derive(Debug, Clone, PartialEq)]
pub struct LadParams {
    pub rows: usize,
    pub cols: usize,
    /// Probability that an entry of `K` is nonzero.
    pub density: f64,
    /// Scale of the Laplace noise added to `b`.
    pub noise: f64,
    /// Fraction of nonzero coordinates in the planted `x`.
    pub support: f64,
    pub seed: u64,
}

impl LadParams {
    pub fn new(rows: usize, cols: usize, density: f64, seed: u64) -> Self {
        LadParams {
            rows,
            cols,
            density,
            noise: 0.1,
            support: 0.05,
            seed,
        }
    }
}

/// A generated instance `b = K x_nat + noise`.
#[derive(Debug, Clone)]
pub struct Instance {
    pub k: BlockMatrix,
    pub b: Vec<f64>,
    pub x_nat: Vec<f64>,
}

fn check_density(density: f64) -> Result<()> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(param("density", format!("must lie in (0, 1], got {density}")));
    }
    Ok(())
}

/// Gaussian sparse `K`, planted sparse `x_nat`, Laplace noise on `b`.
pub fn gen_lad(params: &LadParams) -> Result<Instance> {
    check_density(params.density)?;
    if params.rows == 0 || params.cols == 0 {
        return Err(param("shape", "rows and cols must be >= 1"));
    }
    if !(params.support > 0.0 && params.support <= 1.0) {
        return Err(param("support", format!("must lie in (0, 1], got {}", params.support)));
    }
    let mut rng = rng_for(params.seed, DATA_STREAM);
    let mut triplets = Vec::new();
    for r in 0..params.rows {
        for c in 0..params.cols {
            if params.density >= 1.0 || rng.random::<f64>() < params.density {
                let v: f64 = rng.sample(StandardNormal);
                triplets.push((r, c, v));
            }
        }
    }
    let k = BlockMatrix::from_triplets(params.rows, params.cols, triplets)?;
    let count = ((params.support * params.cols as f64).round() as usize).clamp(1, params.cols);
    let mut support = sample(&mut rng, params.cols, count).into_vec();
    support.sort_unstable();
    let mut x_nat = vec![0.0; params.cols];
    for c in support {
        x_nat[c] = rng.sample(StandardNormal);
    }
    let mut b = k.apply(&x_nat)?;
    if params.noise != 0.0 {
        for v in &mut b {
            *v += params.noise * laplace(&mut rng);
        }
    }
    Ok(Instance { k, b, x_nat })
}

/// Recipe for a synthetic binary classification dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmParams {
    pub samples: usize,
    pub features: usize,
    pub density: f64,
    /// Fraction of labels flipped after planting.
    pub flip: f64,
    pub seed: u64,
}

impl SvmParams {
    pub fn new(samples: usize, features: usize, seed: u64) -> Self {
        SvmParams {
            samples,
            features,
            density: 0.2,
            flip: 0.1,
            seed,
        }
    }
}

/// Sparse Gaussian rows scaled to unit norm, labels from a planted
/// hyperplane with a fraction flipped.
pub fn gen_svm(params: &SvmParams) -> Result<Dataset> {
    check_density(params.density)?;
    if params.samples == 0 || params.features == 0 {
        return Err(param("shape", "samples and features must be >= 1"));
    }
    if !(0.0..=1.0).contains(&params.flip) {
        return Err(param("flip", format!("must lie in [0, 1], got {}", params.flip)));
    }
    let mut rng = rng_for(params.seed, DATA_STREAM);
    let w: Vec<f64> = (0..params.features).map(|_| rng.sample(StandardNormal)).collect();
    let mut rows = Vec::with_capacity(params.samples);
    let mut labels = Vec::with_capacity(params.samples);
    for _ in 0..params.samples {
        let mut row: Vec<(usize, f64)> = Vec::new();
        for c in 0..params.features {
            if rng.random::<f64>() < params.density {
                row.push((c, rng.sample(StandardNormal)));
            }
        }
        if row.is_empty() {
            let c = rng.random_range(0..params.features);
            row.push((c, rng.sample(StandardNormal)));
        }
        let norm = row.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
        row.iter_mut().for_each(|(_, v)| *v /= norm);
        let dot: f64 = row.iter().map(|(c, v)| v * w[*c]).sum();
        let mut label = if dot >= 0.0 { 1.0 } else { -1.0 };
        if rng.random::<f64>() < params.flip {
            label = -label;
        }
        rows.push(row);
        labels.push(label);
    }
    Ok(Dataset {
        rows,
        labels: Some(labels),
        n_features: params.features,
    })
}

const INSTANCE_MAGIC: &str = "randpd-instance 1";

/// Text dump: magic line, `d p nnz`, `nnz` lines `row col value`, one line
/// of `b`, one line of `x_nat`.
pub fn write_instance(inst: &Instance, mut out: impl Write) -> Result<()> {
    writeln!(out, "{INSTANCE_MAGIC}")?;
    writeln!(out, "{} {} {}", inst.k.rows(), inst.k.cols(), inst.k.nnz())?;
    for (r, c, v) in inst.k.triplets() {
        writeln!(out, "{r} {c} {v}")?;
    }
    write_vector_line(&mut out, &inst.b)?;
    write_vector_line(&mut out, &inst.x_nat)?;
    Ok(())
}

fn write_vector_line(out: &mut impl Write, v: &[f64]) -> Result<()> {
    let text: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    writeln!(out, "{}", text.join(" "))?;
    Ok(())
}

pub fn read_instance(reader: impl BufRead) -> Result<Instance> {
    let mut lines = reader.lines().enumerate();
    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((i, line)) => Ok((i + 1, line?)),
            None => Err(Error::Parse {
                line: 0,
                msg: format!("unexpected end of file, expected {what}"),
            }),
        }
    };
    let (line, magic) = next("magic")?;
    if magic.trim() != INSTANCE_MAGIC {
        return Err(Error::Parse {
            line,
            msg: "not an instance file".into(),
        });
    }
    let (line, dims) = next("dimensions")?;
    let dims = parse_numbers::<usize>(&dims, line)?;
    let [d, p, nnz] = dims[..] else {
        return Err(Error::Parse {
            line,
            msg: "expected `d p nnz`".into(),
        });
    };
    let mut triplets = Vec::with_capacity(nnz);
    for _ in 0..nnz {
        let (line, text) = next("triplet")?;
        let mut it = text.split_whitespace();
        let bad = || Error::Parse {
            line,
            msg: format!("bad triplet `{text}`"),
        };
        let r: usize = it.next().and_then(|t| t.parse().ok()).ok_or_else(bad)?;
        let c: usize = it.next().and_then(|t| t.parse().ok()).ok_or_else(bad)?;
        let v: f64 = it.next().and_then(|t| t.parse().ok()).ok_or_else(bad)?;
        triplets.push((r, c, v));
    }
    let k = BlockMatrix::from_triplets(d, p, triplets)?;
    let (line, b) = next("b")?;
    let b = parse_numbers::<f64>(&b, line)?;
    let (line, x) = next("x")?;
    let x_nat = parse_numbers::<f64>(&x, line)?;
    if b.len() != d || x_nat.len() != p {
        return Err(Error::Parse {
            line,
            msg: "vector lengths do not match dimensions".into(),
        });
    }
    Ok(Instance { k, b, x_nat })
}

fn parse_numbers<T: std::str::FromStr>(text: &str, line: usize) -> Result<Vec<T>> {
    text.split_whitespace()
        .map(|t| {
            t.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("bad number `{t}`"),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn parse_grammar() {
        let data = parse_libsvm("+1 3:0.5 7:1.2\n-1\n# comment only\n".as_bytes(), None).unwrap();
        assert_eq!(data.rows[0], vec![(2, 0.5), (6, 1.2)]);
        assert!(data.rows[1].is_empty());
        assert_eq!(data.labels.unwrap(), vec![1.0, -1.0]);
        assert_eq!(data.n_features, 7);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let cases = ["+1 1:0.5\n+1 2:x\n", "+1 1:1\n+1 3:1 2:1\n", "+1 1:1\n\n-1 1-2\n", "+1 0:1\n"];
        let lines = [2, 2, 3, 1];
        for (text, want) in cases.iter().zip(lines) {
            match parse_libsvm(text.as_bytes(), None) {
                Err(Error::Parse { line, .. }) => assert_eq!(line, want, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
        assert!(parse_libsvm("+1 5:1\n".as_bytes(), Some(3)).is_err());
    }

    #[test]
    fn libsvm_round_trip() {
        let data = gen_svm(&SvmParams::new(40, 15, 3)).unwrap();
        let mut buf = Vec::new();
        write_libsvm(&data, &mut buf).unwrap();
        let back = parse_libsvm(buf.as_slice(), Some(15)).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn partition_examples() {
        assert_eq!(partition(10, 2).unwrap().boundaries(), &[0, 5, 10]);
        assert_eq!(partition(10, 3).unwrap().boundaries(), &[0, 4, 7, 10]);
        assert_eq!(partition(5, 5).unwrap().boundaries(), &[0, 1, 2, 3, 4, 5]);
        assert!(partition(3, 4).is_err());
    }

    #[test]
    fn noiseless_dense_lad() {
        let mut p = LadParams::new(20, 10, 1.0, 9);
        p.noise = 0.0;
        let inst = gen_lad(&p).unwrap();
        assert_eq!(inst.k.nnz(), 200);
        assert_eq!(inst.b, inst.k.apply(&inst.x_nat).unwrap());
        assert!(gen_lad(&LadParams::new(5, 5, 0.0, 1)).is_err());
        assert!(gen_lad(&LadParams::new(5, 5, 1.5, 1)).is_err());
    }

    #[test]
    fn lad_density_within_binomial_band() {
        for density in [0.5, 0.1, 0.01] {
            let inst = gen_lad(&LadParams::new(300, 200, density, 11)).unwrap();
            let n = 300.0 * 200.0;
            let mean = density * n;
            let sd = (n * density * (1.0 - density)).sqrt();
            assert!((inst.k.nnz() as f64 - mean).abs() <= 3.0 * sd, "{density}");
        }
    }

    #[test]
    fn generation_is_seeded() {
        let a = gen_lad(&LadParams::new(30, 20, 0.3, 5)).unwrap();
        let b = gen_lad(&LadParams::new(30, 20, 0.3, 5)).unwrap();
        let c = gen_lad(&LadParams::new(30, 20, 0.3, 6)).unwrap();
        assert_eq!(a.k.to_dense(), b.k.to_dense());
        assert_eq!(a.b, b.b);
        assert_ne!(a.b, c.b);
    }

    #[test]
    fn laplace_moments() {
        let mut rng = rng_for(1, DATA_STREAM);
        let n = 200_000;
        let draws: Vec<f64> = (0..n).map(|_| laplace(&mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let abs_mean = draws.iter().map(|v| v.abs()).sum::<f64>() / n as f64;
        // Laplace(0,1): E x = 0, E|x| = 1, standard error ~ 1/sqrt(n)
        assert!(mean.abs() < 0.02);
        assert_relative_eq!(abs_mean, 1.0, epsilon = 0.02);
    }

    #[test]
    fn svm_rows_are_unit_and_labels_signed() {
        let data = gen_svm(&SvmParams::new(50, 8, 2)).unwrap();
        for row in &data.rows {
            assert!(!row.is_empty());
            assert_relative_eq!(row.iter().map(|(_, v)| v * v).sum::<f64>(), 1.0, max_relative = 1e-12);
        }
        assert!(data.labels.unwrap().iter().all(|l| *l == 1.0 || *l == -1.0));
    }

    #[test]
    fn instance_round_trip() {
        let inst = gen_lad(&LadParams::new(12, 7, 0.4, 8)).unwrap();
        let mut buf = Vec::new();
        write_instance(&inst, &mut buf).unwrap();
        let back = read_instance(buf.as_slice()).unwrap();
        assert_eq!(back.k.to_dense(), inst.k.to_dense());
        assert_eq!(back.b, inst.b);
        assert_eq!(back.x_nat, inst.x_nat);
        assert!(read_instance("nope\n".as_bytes()).is_err());
    }
}
