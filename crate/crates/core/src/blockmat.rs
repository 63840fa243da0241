//! Sparse linear operator with row-block and column-block access.
//!
//! The matrix `K` is stored twice: once row-major (CSR) for the dual side,
//! where the fully randomized method touches a row block `K_i`, and once
//! column-major (CSC) for the primal side, where both randomized methods
//! touch a column block `K_j`. Both copies enumerate the same nonzeros.

use std::ops::Range;

use crate::error::{check_len, param, Error, Result};

/// Contiguous split of `0..dim` into blocks.
///
/// Block `k` spans `boundaries[k]..boundaries[k + 1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    boundaries: Vec<usize>,
}

impl Partition {
    pub fn new(boundaries: Vec<usize>) -> Result<Self> {
        if boundaries.len() < 2 {
            return Err(Error::Partition("need at least one block".into()));
        }
        if boundaries[0] != 0 {
            return Err(Error::Partition("first offset must be 0".into()));
        }
        if boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Partition("offsets must be strictly increasing".into()));
        }
        Ok(Partition { boundaries })
    }

    /// Near-equal contiguous blocks: the first `dim % n_blocks` blocks get one
    /// extra element.
    pub fn even(dim: usize, n_blocks: usize) -> Result<Self> {
        if n_blocks == 0 || n_blocks > dim {
            return Err(Error::Partition(format!(
                "cannot split dimension {dim} into {n_blocks} blocks"
            )));
        }
        let base = dim / n_blocks;
        let extra = dim % n_blocks;
        let mut boundaries = Vec::with_capacity(n_blocks + 1);
        let mut at = 0;
        boundaries.push(0);
        for k in 0..n_blocks {
            at += base + usize::from(k < extra);
            boundaries.push(at);
        }
        Ok(Partition { boundaries })
    }

    /// One block per coordinate.
    pub fn singletons(dim: usize) -> Result<Self> {
        Self::even(dim, dim)
    }

    pub fn count(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn dim(&self) -> usize {
        *self.boundaries.last().unwrap()
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn range(&self, block: usize) -> Range<usize> {
        self.boundaries[block]..self.boundaries[block + 1]
    }

    pub fn block_len(&self, block: usize) -> usize {
        self.boundaries[block + 1] - self.boundaries[block]
    }

    /// Block containing coordinate `index`.
    pub fn block_of(&self, index: usize) -> usize {
        debug_assert!(index < self.dim());
        self.boundaries.partition_point(|&b| b <= index) - 1
    }

    fn check_block(&self, block: usize) -> Result<()> {
        if block >= self.count() {
            return Err(Error::BlockIndex {
                index: block,
                count: self.count(),
            });
        }
        Ok(())
    }
}

/// Result of an operator norm estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpNormEstimate {
    /// Estimated squared spectral norm.
    pub value: f64,
    /// Power iterations spent (0 when the exact small-dimension path was used).
    pub iterations: usize,
    /// False when the iteration cap was hit before the stopping rule fired.
    pub converged: bool,
}

pub const POWER_ITER_CAP: usize = 10_000;
pub const POWER_ITER_TOL: f64 = 1e-8;

/// Sparse `d x p` matrix with CSR and CSC copies plus row and column
/// partitions.
#[derive(Debug, Clone)]
pub struct BlockMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    row_col: Vec<usize>,
    row_val: Vec<f64>,
    col_ptr: Vec<usize>,
    col_row: Vec<usize>,
    col_val: Vec<f64>,
    row_part: Partition,
    col_part: Partition,
}

impl BlockMatrix {
    /// Builds from `(row, col, value)` triplets. Duplicates are summed and
    /// explicit zeros dropped. Partitions default to one block per side.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(param("shape", "matrix must have at least one row and column"));
        }
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        for (r, c, v) in triplets {
            if r >= rows {
                return Err(Error::DimensionMismatch {
                    what: "triplet row",
                    expected: rows,
                    got: r,
                });
            }
            if c >= cols {
                return Err(Error::DimensionMismatch {
                    what: "triplet column",
                    expected: cols,
                    got: c,
                });
            }
            if !v.is_finite() {
                return Err(param("value", format!("non-finite entry at ({r}, {c})")));
            }
            entries.push((r, c, v));
        }
        entries.sort_by_key(|&(r, c, _)| (r, c));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(entries.len());
        for (r, c, v) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        merged.retain(|e| e.2 != 0.0);

        let mut row_ptr = vec![0usize; rows + 1];
        let mut row_col = Vec::with_capacity(merged.len());
        let mut row_val = Vec::with_capacity(merged.len());
        for &(r, c, v) in &merged {
            row_ptr[r + 1] += 1;
            row_col.push(c);
            row_val.push(v);
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }

        let mut col_ptr = vec![0usize; cols + 1];
        for &(_, c, _) in &merged {
            col_ptr[c + 1] += 1;
        }
        for c in 0..cols {
            col_ptr[c + 1] += col_ptr[c];
        }
        let mut next = col_ptr.clone();
        let mut col_row = vec![0usize; merged.len()];
        let mut col_val = vec![0.0; merged.len()];
        // merged is row-sorted, so each column receives its rows in order
        for &(r, c, v) in &merged {
            let at = next[c];
            col_row[at] = r;
            col_val[at] = v;
            next[c] += 1;
        }

        Ok(BlockMatrix {
            rows,
            cols,
            row_ptr,
            row_col,
            row_val,
            col_ptr,
            col_row,
            col_val,
            row_part: Partition::even(rows, 1)?,
            col_part: Partition::even(cols, 1)?,
        })
    }

    /// Builds from dense row-major rows.
    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        for row in rows {
            check_len("dense row", p, row.len())?;
        }
        let triplets = rows.iter().enumerate().flat_map(|(r, row)| {
            row.iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(move |(c, v)| (r, c, *v))
        });
        Self::from_triplets(d, p, triplets)
    }

    pub fn identity(dim: usize) -> Result<Self> {
        Self::from_triplets(dim, dim, (0..dim).map(|i| (i, i, 1.0)))
    }

    pub fn with_partitions(mut self, row_part: Partition, col_part: Partition) -> Result<Self> {
        check_len("row partition", self.rows, row_part.dim())?;
        check_len("column partition", self.cols, col_part.dim())?;
        self.row_part = row_part;
        self.col_part = col_part;
        Ok(self)
    }

    /// Re-partitions into `m` near-equal row blocks and `n` column blocks.
    pub fn with_even_blocks(self, m: usize, n: usize) -> Result<Self> {
        let rp = Partition::even(self.rows, m)?;
        let cp = Partition::even(self.cols, n)?;
        self.with_partitions(rp, cp)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.row_val.len()
    }

    pub fn row_partition(&self) -> &Partition {
        &self.row_part
    }

    pub fn col_partition(&self) -> &Partition {
        &self.col_part
    }

    /// Nonzeros of row `r` as `(col, value)` pairs.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.row_col[span.clone()]
            .iter()
            .copied()
            .zip(self.row_val[span].iter().copied())
    }

    /// Nonzeros of column `c` as `(row, value)` pairs.
    pub fn col(&self, c: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.col_ptr[c]..self.col_ptr[c + 1];
        self.col_row[span.clone()]
            .iter()
            .copied()
            .zip(self.col_val[span].iter().copied())
    }

    /// All nonzeros in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    /// Column block `K_j` as a standalone `d x p_j` matrix.
    pub fn col_block_matrix(&self, j: usize) -> Result<BlockMatrix> {
        self.col_part.check_block(j)?;
        let range = self.col_part.range(j);
        let start = range.start;
        BlockMatrix::from_triplets(
            self.rows,
            range.len(),
            range.flat_map(|c| self.col(c).map(move |(r, v)| (r, c - start, v))),
        )
    }

    /// Row block `K_i` as a standalone `d_i x p` matrix.
    pub fn row_block_matrix(&self, i: usize) -> Result<BlockMatrix> {
        self.row_part.check_block(i)?;
        let range = self.row_part.range(i);
        let start = range.start;
        BlockMatrix::from_triplets(
            range.len(),
            self.cols,
            range.flat_map(|r| self.row(r).map(move |(c, v)| (r - start, c, v))),
        )
    }

    /// Nonzero count of column block `j`.
    pub fn col_block_nnz(&self, j: usize) -> usize {
        let range = self.col_part.range(j);
        self.col_ptr[range.end] - self.col_ptr[range.start]
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.cols]; self.rows];
        for (r, c, v) in self.triplets() {
            out[r][c] = v;
        }
        out
    }

    /// Dense reconstruction from the column-major copy.
    pub fn to_dense_from_columns(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.cols]; self.rows];
        for c in 0..self.cols {
            for (r, v) in self.col(c) {
                out[r][c] = v;
            }
        }
        out
    }

    /// `K x`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("apply input", self.cols, x.len())?;
        let mut out = vec![0.0; self.rows];
        self.apply_into(x, &mut out);
        Ok(out)
    }

    pub(crate) fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.row(r).map(|(c, v)| v * x[c]).sum();
        }
    }

    /// `K^T y`.
    pub fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len("adjoint input", self.rows, y.len())?;
        let mut out = vec![0.0; self.cols];
        self.apply_adjoint_into(y, &mut out);
        Ok(out)
    }

    pub(crate) fn apply_adjoint_into(&self, y: &[f64], out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            *o = self.col(c).map(|(r, v)| v * y[r]).sum();
        }
    }

    /// `K_j dx_j` as a full `d`-vector.
    pub fn col_block_apply(&self, j: usize, dx: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.rows];
        self.col_block_axpy(j, 1.0, dx, &mut out)?;
        Ok(out)
    }

    /// `out += scale * K_j dx_j`, touching only rows with nonzeros in block `j`.
    pub fn col_block_axpy(&self, j: usize, scale: f64, dx: &[f64], out: &mut [f64]) -> Result<()> {
        self.col_part.check_block(j)?;
        check_len("column block increment", self.col_part.block_len(j), dx.len())?;
        check_len("column block output", self.rows, out.len())?;
        self.col_block_axpy_unchecked(j, scale, dx, out);
        Ok(())
    }

    pub(crate) fn col_block_axpy_unchecked(&self, j: usize, scale: f64, dx: &[f64], out: &mut [f64]) {
        let range = self.col_part.range(j);
        for (offset, c) in range.enumerate() {
            let s = scale * dx[offset];
            if s == 0.0 {
                continue;
            }
            for (r, v) in self.col(c) {
                out[r] += s * v;
            }
        }
    }

    /// `K_i x`, the rows of block `i` applied to the full vector `x`.
    pub fn row_block_dot(&self, i: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.row_part.check_block(i)?;
        check_len("row block input", self.cols, x.len())?;
        Ok(self
            .row_part
            .range(i)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect())
    }

    /// `K_j^T y`, the columns of block `j` against the full vector `y`.
    pub fn col_block_adjoint(&self, j: usize, y: &[f64]) -> Result<Vec<f64>> {
        self.col_part.check_block(j)?;
        check_len("column block adjoint input", self.rows, y.len())?;
        let mut out = vec![0.0; self.col_part.block_len(j)];
        self.col_block_adjoint_into(j, y, &mut out);
        Ok(out)
    }

    pub(crate) fn col_block_adjoint_into(&self, j: usize, y: &[f64], out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(self.col_part.range(j)) {
            *o = self.col(c).map(|(r, v)| v * y[r]).sum();
        }
    }

    /// `K_i^T y_i` for a row block, accumulated into a `p`-vector.
    pub(crate) fn row_block_adjoint_axpy(&self, i: usize, scale: f64, y_block: &[f64], out: &mut [f64]) {
        for (offset, r) in self.row_part.range(i).enumerate() {
            let s = scale * y_block[offset];
            if s == 0.0 {
                continue;
            }
            for (c, v) in self.row(r) {
                out[c] += s * v;
            }
        }
    }

    /// Per-column scale `1/sqrt(sigma_j)` expanded from column-block weights.
    fn column_scales(&self, weights: &[f64]) -> Result<Vec<f64>> {
        check_len("column block weights", self.col_part.count(), weights.len())?;
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
            return Err(param("sigma", format!("weights must be positive, got {w}")));
        }
        let mut scales = vec![0.0; self.cols];
        for (j, w) in weights.iter().enumerate() {
            let s = 1.0 / w.sqrt();
            for c in self.col_part.range(j) {
                scales[c] = s;
            }
        }
        Ok(scales)
    }

    /// `||K diag(1/sqrt(sigma))||^2` with `sigma` given per column block.
    ///
    /// Power iteration on `A^T A` with `A = K diag(1/sqrt(sigma))`, started at
    /// the normalized all-ones vector, stopped when the Rayleigh quotient
    /// changes by less than [`POWER_ITER_TOL`] relative or after
    /// [`POWER_ITER_CAP`] iterations. When either dimension is at most 3 the
    /// largest eigenvalue of the small Gram matrix is computed in closed form.
    pub fn opnorm_sq_weighted(&self, sigma: &[f64]) -> Result<OpNormEstimate> {
        let scales = self.column_scales(sigma)?;
        let small = self.rows.min(self.cols);
        if small <= 3 {
            let gram = self.small_gram(&scales);
            return Ok(OpNormEstimate {
                value: largest_sym_eigenvalue(&gram),
                iterations: 0,
                converged: true,
            });
        }
        Ok(self.power_iteration(&scales))
    }

    /// Unweighted `||K||^2`.
    pub fn opnorm_sq(&self) -> Result<OpNormEstimate> {
        self.opnorm_sq_weighted(&vec![1.0; self.col_part.count()])
    }

    /// Gram matrix of the scaled operator on its smaller side.
    fn small_gram(&self, scales: &[f64]) -> Vec<Vec<f64>> {
        let a = self.to_dense();
        let scaled: Vec<Vec<f64>> = a
            .iter()
            .map(|row| row.iter().zip(scales).map(|(v, s)| v * s).collect())
            .collect();
        if self.rows <= self.cols {
            // A A^T
            (0..self.rows)
                .map(|i| {
                    (0..self.rows)
                        .map(|k| scaled[i].iter().zip(&scaled[k]).map(|(x, y)| x * y).sum())
                        .collect()
                })
                .collect()
        } else {
            // A^T A
            (0..self.cols)
                .map(|i| {
                    (0..self.cols)
                        .map(|k| scaled.iter().map(|row| row[i] * row[k]).sum())
                        .collect()
                })
                .collect()
        }
    }

    fn power_iteration(&self, scales: &[f64]) -> OpNormEstimate {
        let p = self.cols;
        let mut v = vec![1.0 / (p as f64).sqrt(); p];
        let mut av = vec![0.0; self.rows];
        let mut w = vec![0.0; p];
        let mut scaled = vec![0.0; p];
        let mut lambda = 0.0;
        let mut restarted = false;
        for it in 1..=POWER_ITER_CAP {
            for c in 0..p {
                scaled[c] = v[c] * scales[c];
            }
            self.apply_into(&scaled, &mut av);
            let next = av.iter().map(|x| x * x).sum::<f64>();
            self.apply_adjoint_into(&av, &mut w);
            for c in 0..p {
                w[c] *= scales[c];
            }
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                if restarted || self.nnz() == 0 {
                    return OpNormEstimate {
                        value: 0.0,
                        iterations: it,
                        converged: true,
                    };
                }
                // all-ones start is in the null space; fall back to a fixed
                // irrational-step sequence
                restarted = true;
                for (c, x) in v.iter_mut().enumerate() {
                    *x = ((c as f64 + 1.0) * 0.618_033_988_749_895).fract() - 0.5;
                }
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter_mut().for_each(|x| *x /= n);
                continue;
            }
            for c in 0..p {
                v[c] = w[c] / norm;
            }
            if it > 1 && (next - lambda).abs() <= POWER_ITER_TOL * next {
                // one more Rayleigh quotient on the refreshed vector
                return OpNormEstimate {
                    value: next.max(lambda),
                    iterations: it,
                    converged: true,
                };
            }
            lambda = next;
        }
        OpNormEstimate {
            value: lambda,
            iterations: POWER_ITER_CAP,
            converged: false,
        }
    }
}

/// Largest eigenvalue of a symmetric PSD matrix of size 1, 2 or 3.
fn largest_sym_eigenvalue(a: &[Vec<f64>]) -> f64 {
    match a.len() {
        1 => a[0][0],
        2 => {
            let tr = a[0][0] + a[1][1];
            let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
            let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
            tr / 2.0 + disc
        }
        3 => {
            // trigonometric solution of the characteristic cubic
            let p1 = a[0][1].powi(2) + a[0][2].powi(2) + a[1][2].powi(2);
            let q = (a[0][0] + a[1][1] + a[2][2]) / 3.0;
            if p1 == 0.0 {
                return a[0][0].max(a[1][1]).max(a[2][2]);
            }
            let p2 = (a[0][0] - q).powi(2) + (a[1][1] - q).powi(2) + (a[2][2] - q).powi(2) + 2.0 * p1;
            let p = (p2 / 6.0).sqrt();
            let b: Vec<Vec<f64>> = (0..3)
                .map(|i| {
                    (0..3)
                        .map(|j| (a[i][j] - if i == j { q } else { 0.0 }) / p)
                        .collect()
                })
                .collect();
            let det_b = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1])
                - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
                + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
            let r = (det_b / 2.0).clamp(-1.0, 1.0);
            let phi = r.acos() / 3.0;
            q + 2.0 * p * phi.cos()
        }
        _ => unreachable!("closed form only for dimension <= 3"),
    }
}
