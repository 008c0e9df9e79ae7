//! Dense matrices and a one-sided Jacobi SVD.
//!
//! Everything here works in `f64`. The SVD is the Hestenes one-sided
//! Jacobi method: column pairs of a working copy are rotated until they are
//! mutually orthogonal, at which point the column norms are the singular
//! values. It is slow for large matrices but accurate to working precision
//! and fully deterministic, which the codec relies on for reproducible
//! archives.

use std::fmt;

use thiserror::Error;

/// Pairs whose normalized inner product is below this are considered
/// orthogonal.
const ORTHOGONALITY_TOL: f64 = 1e-12;

/// Sweep cap for the Jacobi iteration.
const MAX_SWEEPS: usize = 30;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix contains a non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("matrix data length {len} does not match {rows}x{cols}")]
    ShapeMismatch {
        rows: usize,
        cols: usize,
        len: usize,
    },
    #[error("matrix must have at least one row and one column")]
    Empty,
    #[error("rank {k} outside 1..={max}")]
    InvalidRank { k: usize, max: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Row-major dense matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major data, rejecting NaN and infinities.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::ShapeMismatch {
                rows,
                cols,
                len: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite {
                row: i / cols.max(1),
                col: i % cols.max(1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self, LinalgError> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(LinalgError::Dimension("ragged rows".into()));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m.data[i * n + i] = *v;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        if self.cols != other.rows {
            return Err(LinalgError::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        self.zip_with(other, |a, b| a + b)
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix, LinalgError> {
        if self.shape() != other.shape() {
            return Err(LinalgError::Dimension(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copies the `rows x cols` block whose top-left corner is `(r0, c0)`.
    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Matrix {
        assert!(r0 + rows <= self.rows && c0 + cols <= self.cols);
        let mut data = Vec::with_capacity(rows * cols);
        for r in r0..r0 + rows {
            data.extend_from_slice(&self.data[r * self.cols + c0..r * self.cols + c0 + cols]);
        }
        Matrix { rows, cols, data }
    }

    /// Writes `src` into `self` with its top-left corner at `(r0, c0)`.
    pub fn set_block(&mut self, r0: usize, c0: usize, src: &Matrix) {
        assert!(r0 + src.rows <= self.rows && c0 + src.cols <= self.cols);
        for r in 0..src.rows {
            let dst = (r0 + r) * self.cols + c0;
            self.data[dst..dst + src.cols].copy_from_slice(src.row(r));
        }
    }
}

/// Truncated (or thin) singular value decomposition `U diag(sigma) Vᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorTriple {
    /// `m x k`, orthonormal columns.
    pub u: Matrix,
    /// Non-negative, non-increasing.
    pub sigma: Vec<f64>,
    /// `k x n`, orthonormal rows.
    pub vt: Matrix,
}

impl FactorTriple {
    #[inline]
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn rows(&self) -> usize {
        self.u.rows()
    }

    pub fn cols(&self) -> usize {
        self.vt.cols()
    }

    /// Number of stored values: `k (m + n + 1)`.
    pub fn element_count(&self) -> usize {
        self.rank() * (self.rows() + self.cols() + 1)
    }

    /// Count of singular values above `tol * sigma_max`.
    pub fn effective_rank(&self, tol: f64) -> usize {
        let top = self.sigma.first().copied().unwrap_or(0.0);
        self.sigma.iter().filter(|&&s| s > tol * top).count()
    }

    /// Keeps the leading `k` triplets.
    pub fn truncate(&self, k: usize) -> Result<FactorTriple, LinalgError> {
        if k == 0 || k > self.rank() {
            return Err(LinalgError::InvalidRank {
                k,
                max: self.rank(),
            });
        }
        if k == self.rank() {
            return Ok(self.clone());
        }
        Ok(FactorTriple {
            u: self.u.block(0, 0, self.u.rows(), k),
            sigma: self.sigma[..k].to_vec(),
            vt: self.vt.block(0, 0, k, self.vt.cols()),
        })
    }

    /// `U diag(sigma) Vᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let (m, n, k) = (self.rows(), self.cols(), self.rank());
        let mut out = Matrix::zeros(m, n);
        for i in 0..m {
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for p in 0..k {
                let w = self.u.get(i, p) * self.sigma[p];
                if w == 0.0 {
                    continue;
                }
                for (o, &v) in out_row.iter_mut().zip(self.vt.row(p)) {
                    *o += w * v;
                }
            }
        }
        out
    }
}

/// Thin SVD with `k = min(m, n)`.
///
/// Singular values come out non-increasing; each left singular vector is
/// signed so its largest-magnitude entry (lowest index on ties) is
/// non-negative. Output is bit-identical for identical input.
pub fn svd(a: &Matrix) -> Result<FactorTriple, LinalgError> {
    if a.rows == 0 || a.cols == 0 {
        return Err(LinalgError::Empty);
    }
    if let Some(i) = a.data.iter().position(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite {
            row: i / a.cols,
            col: i % a.cols,
        });
    }
    if a.rows >= a.cols {
        Ok(jacobi_tall(a))
    } else {
        // A = U S Vᵀ  <=>  Aᵀ = V S Uᵀ
        let t = jacobi_tall(&a.transpose());
        let mut f = FactorTriple {
            u: t.vt.transpose(),
            sigma: t.sigma,
            vt: t.u.transpose(),
        };
        fix_signs(&mut f);
        Ok(f)
    }
}

/// Best rank-`k` approximation in the Frobenius norm.
pub fn k_rank_approx(a: &Matrix, k: usize) -> Result<Matrix, LinalgError> {
    let max = a.rows.min(a.cols);
    if k == 0 || k > max {
        return Err(LinalgError::InvalidRank { k, max });
    }
    Ok(svd(a)?.truncate(k)?.reconstruct())
}

/// One-sided Jacobi on a matrix with `rows >= cols`.
fn jacobi_tall(a: &Matrix) -> FactorTriple {
    let (m, n) = a.shape();
    // Column-major working copies so each column is contiguous.
    let mut w: Vec<f64> = a.transpose().data;
    let mut v: Vec<f64> = Matrix::identity(n).data;

    let scale = a.frobenius_norm();
    // Columns below this norm are numerically null and no longer rotated.
    let null_tol = scale * f64::EPSILON * (m as f64);
    let null_tol_sq = null_tol * null_tol;

    let mut norms: Vec<f64> = (0..n).map(|j| dot(col(&w, m, j), col(&w, m, j))).collect();

    for _sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let alpha = norms[p];
                let beta = norms[q];
                if alpha <= null_tol_sq || beta <= null_tol_sq {
                    continue;
                }
                let gamma = dot(col(&w, m, p), col(&w, m, q));
                if gamma.abs() <= ORTHOGONALITY_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, m, p, q, c, s);
                rotate(&mut v, n, p, q, c, s);
                norms[p] = dot(col(&w, m, p), col(&w, m, p));
                norms[q] = dot(col(&w, m, q), col(&w, m, q));
            }
        }
        if !rotated {
            break;
        }
    }

    let mut sigma: Vec<f64> = norms.iter().map(|x| x.sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]).then(i.cmp(&j)));

    let mut u = Matrix::zeros(m, n);
    let mut vmat = Matrix::zeros(n, n);
    let mut null_cols = Vec::new();
    let sorted_sigma: Vec<f64> = order.iter().map(|&j| sigma[j]).collect();
    for (dst, &src) in order.iter().enumerate() {
        let s = sigma[src];
        let wc = col(&w, m, src);
        if s > null_tol {
            for i in 0..m {
                u.set(i, dst, wc[i] / s);
            }
        } else {
            null_cols.push(dst);
        }
        let vc = col(&v, n, src);
        for i in 0..n {
            vmat.set(i, dst, vc[i]);
        }
    }
    sigma = sorted_sigma;
    complete_orthonormal_columns(&mut u, &null_cols);

    let mut f = FactorTriple {
        u,
        sigma,
        vt: vmat.transpose(),
    };
    fix_signs(&mut f);
    f
}

#[inline]
fn col(buf: &[f64], len: usize, j: usize) -> &[f64] {
    &buf[j * len..(j + 1) * len]
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn rotate(buf: &mut [f64], len: usize, p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = buf.split_at_mut(q * len);
    let cp = &mut head[p * len..(p + 1) * len];
    let cq = &mut tail[..len];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, yq) = (*x, *y);
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

/// Fills the listed (zero) columns of `u` with unit vectors orthogonal to
/// every other column, drawing candidates from the standard basis.
fn complete_orthonormal_columns(u: &mut Matrix, targets: &[usize]) {
    if targets.is_empty() {
        return;
    }
    let (m, k) = u.shape();
    let mut filled: Vec<bool> = (0..k).map(|j| !targets.contains(&j)).collect();
    let mut basis = 0usize;
    for &t in targets {
        while basis < m {
            let mut cand = vec![0.0; m];
            cand[basis] = 1.0;
            basis += 1;
            // Two Gram-Schmidt passes for numerical orthogonality.
            for _ in 0..2 {
                for j in (0..k).filter(|&j| filled[j]) {
                    let proj: f64 = (0..m).map(|i| u.get(i, j) * cand[i]).sum();
                    for (i, c) in cand.iter_mut().enumerate() {
                        *c -= proj * u.get(i, j);
                    }
                }
            }
            let norm = dot(&cand, &cand).sqrt();
            if norm > 1e-6 {
                for (i, c) in cand.iter().enumerate() {
                    u.set(i, t, c / norm);
                }
                filled[t] = true;
                break;
            }
        }
    }
}

fn fix_signs(f: &mut FactorTriple) {
    let (m, k) = f.u.shape();
    for j in 0..k {
        let mut best = 0usize;
        let mut best_abs = -1.0;
        for i in 0..m {
            let a = f.u.get(i, j).abs();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        if f.u.get(best, j) < 0.0 {
            for i in 0..m {
                let x = f.u.get(i, j);
                f.u.set(i, j, -x);
            }
            let n = f.vt.cols();
            for c in 0..n {
                let x = f.vt.get(j, c);
                f.vt.set(j, c, -x);
            }
        }
    }
}
