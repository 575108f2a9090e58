//! Dense square matrices and the matrix side of Webb's protocol: inversion,
//! the `delta`/target/ratio construction, singular values and the query-bound
//! calculators.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `sigma_n / sigma_1` below this is treated as `det = 0`.
pub const SINGULAR_RATIO: f64 = 1e-12;

/// Row-sum tolerance for stochastic matrices built from measures.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Tolerances on the ratio matrix `R = M^-1 N`.
pub const RATIO_ROW_SUM_TOL: f64 = 1e-9;
pub const RATIO_NEG_TOL: f64 = 1e-12;
pub const RATIO_MIN_CEIL: f64 = 1e-9;

/// Smallest `n` for which the `n^7 max(1, 1/sigma_n)` bound is stated.
pub const SIGMA_BOUND_MIN_N: usize = 19;

#[derive(Serialize, Deserialize)]
struct MatrixFile {
    n: usize,
    rows: Vec<Vec<f64>>,
}

/// An `n x n` real matrix in row-major order with finite entries.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixFile", into = "MatrixFile")]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl TryFrom<MatrixFile> for SquareMatrix {
    type Error = Error;

    fn try_from(f: MatrixFile) -> Result<Self> {
        if f.rows.len() != f.n {
            return Err(Error::domain(format!("expected {} rows, got {}", f.n, f.rows.len())));
        }
        SquareMatrix::from_rows(&f.rows)
    }
}

impl From<SquareMatrix> for MatrixFile {
    fn from(m: SquareMatrix) -> Self {
        MatrixFile {
            n: m.n,
            rows: m.rows().map(<[f64]>::to_vec).collect(),
        }
    }
}

impl fmt::Debug for SquareMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.rows()).finish()
    }
}

impl SquareMatrix {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::domain("matrix dimension must be at least 1"));
        }
        if data.len() != n * n {
            return Err(Error::domain(format!("{} entries for a {n}x{n} matrix", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("matrix entries must be finite"));
        }
        Ok(SquareMatrix { n, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for r in rows {
            let r = r.as_ref();
            if r.len() != n {
                return Err(Error::domain("matrix rows must all have length n"));
            }
            data.extend_from_slice(r);
        }
        SquareMatrix::new(n, data)
    }

    pub fn identity(n: usize) -> Self {
        SquareMatrix::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut data = vec![0.0; n * n];
        for (i, d) in diag.iter().enumerate() {
            data[i * n + i] = *d;
        }
        SquareMatrix { n, data }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let data = (0..n * n).map(|k| f(k / n, k % n)).collect();
        SquareMatrix { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.n)
    }

    pub fn transpose(&self) -> SquareMatrix {
        SquareMatrix::from_fn(self.n, |i, j| self[(j, i)])
    }

    pub fn mul(&self, other: &SquareMatrix) -> SquareMatrix {
        assert_eq!(self.n, other.n, "dimension mismatch");
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            let out_row = &mut out[i * n..(i + 1) * n];
            for k in 0..n {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for (o, b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        SquareMatrix { n, data: out }
    }

    /// Permutes rows and columns: entry `(i, j)` of the result is
    /// `self[(rows[i], cols[j])]`.
    pub fn permuted(&self, rows: &[usize], cols: &[usize]) -> SquareMatrix {
        SquareMatrix::from_fn(self.n, |i, j| self[(rows[i], cols[j])])
    }

    /// `max_ij |self_ij - other_ij|`.
    pub fn max_abs_diff(&self, other: &SquareMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Infinity norm (max absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        self.rows()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl Index<(usize, usize)> for SquareMatrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl IndexMut<(usize, usize)> for SquareMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

/// A non-negative matrix whose rows sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SquareMatrix", into = "SquareMatrix")]
pub struct StochasticMatrix(SquareMatrix);

impl TryFrom<SquareMatrix> for StochasticMatrix {
    type Error = Error;

    fn try_from(m: SquareMatrix) -> Result<Self> {
        StochasticMatrix::new(m)
    }
}

impl From<StochasticMatrix> for SquareMatrix {
    fn from(m: StochasticMatrix) -> Self {
        m.0
    }
}

impl StochasticMatrix {
    pub fn new(m: SquareMatrix) -> Result<Self> {
        StochasticMatrix::with_tolerance(m, 0.0, ROW_SUM_TOL)
    }

    /// Accepts entries down to `-neg_tol` and row sums within `sum_tol` of one.
    pub fn with_tolerance(m: SquareMatrix, neg_tol: f64, sum_tol: f64) -> Result<Self> {
        if let Some(v) = m.data.iter().find(|v| **v < -neg_tol) {
            return Err(Error::domain(format!("stochastic matrix has negative entry {v}")));
        }
        for (i, r) in m.rows().enumerate() {
            let s: f64 = r.iter().sum();
            if (s - 1.0).abs() > sum_tol {
                return Err(Error::domain(format!("row {i} sums to {s}")));
            }
        }
        Ok(StochasticMatrix(m))
    }

    pub fn matrix(&self) -> &SquareMatrix {
        &self.0
    }

    pub fn n(&self) -> usize {
        self.0.n
    }

    pub fn into_inner(self) -> SquareMatrix {
        self.0
    }
}

impl std::ops::Deref for StochasticMatrix {
    type Target = SquareMatrix;

    fn deref(&self) -> &SquareMatrix {
        &self.0
    }
}

/// Gauss-Jordan inversion with row pivoting.
///
/// Fails with [`Error::Singular`] when a pivot falls below
/// [`SINGULAR_RATIO`] times the largest entry of `m`.
pub fn invert(m: &SquareMatrix) -> Result<SquareMatrix> {
    let n = m.n;
    let scale = m.max_abs();
    if scale == 0.0 {
        return Err(Error::Singular("zero matrix".into()));
    }
    let mut a = m.data.clone();
    let mut inv = SquareMatrix::identity(n).data;
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&r, &s| a[r * n + col].abs().total_cmp(&a[s * n + col].abs()))
            .expect("non-empty range");
        let pivot = a[pivot_row * n + col];
        if pivot.abs() < SINGULAR_RATIO * scale {
            return Err(Error::Singular(format!(
                "pivot ratio {:e} in column {col}",
                pivot.abs() / scale
            )));
        }
        if pivot_row != col {
            for j in 0..n {
                a.swap(col * n + j, pivot_row * n + j);
                inv.swap(col * n + j, pivot_row * n + j);
            }
        }
        let p = 1.0 / pivot;
        for j in 0..n {
            a[col * n + j] *= p;
            inv[col * n + j] *= p;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = a[r * n + col];
            if f == 0.0 {
                continue;
            }
            for j in 0..n {
                a[r * n + j] -= f * a[col * n + j];
                inv[r * n + j] -= f * inv[col * n + j];
            }
        }
    }
    SquareMatrix::new(n, inv)
}

/// Determinant by LU decomposition with partial pivoting.
pub fn determinant(m: &SquareMatrix) -> f64 {
    let n = m.n;
    let mut a = m.data.clone();
    let mut det = 1.0;
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&r, &s| a[r * n + col].abs().total_cmp(&a[s * n + col].abs()))
            .expect("non-empty range");
        let pivot = a[pivot_row * n + col];
        if pivot == 0.0 {
            return 0.0;
        }
        if pivot_row != col {
            for j in 0..n {
                a.swap(col * n + j, pivot_row * n + j);
            }
            det = -det;
        }
        det *= pivot;
        for r in col + 1..n {
            let f = a[r * n + col] / pivot;
            if f == 0.0 {
                continue;
            }
            for j in col + 1..n {
                a[r * n + j] -= f * a[col * n + j];
            }
        }
    }
    det
}

/// `t = min_ij m_ij`.
pub fn min_entry(m: &SquareMatrix) -> f64 {
    m.data.iter().copied().fold(f64::INFINITY, f64::min)
}

/// `delta = (n - 1) / (n (1 - t n))`. Zero for a single player.
pub fn delta(n: usize, t: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::domain("delta needs n >= 1"));
    }
    if n == 1 {
        return Ok(0.0);
    }
    if !(t <= 0.0) {
        return Err(Error::domain(format!("t = {t} > 0: not the inverse of a witness matrix")));
    }
    let n = n as f64;
    Ok((n - 1.0) / (n * (1.0 - t * n)))
}

/// The target matrix with `1/n + d` on the diagonal and `1/n - d/(n-1)` elsewhere.
pub fn target_matrix(n: usize, d: f64) -> Result<StochasticMatrix> {
    if n == 0 {
        return Err(Error::domain("target_matrix needs n >= 1"));
    }
    if n == 1 {
        return Ok(StochasticMatrix(SquareMatrix::identity(1)));
    }
    let nf = n as f64;
    if !(d > 0.0 && d <= (nf - 1.0) / nf + 1e-15) {
        return Err(Error::domain(format!("delta {d} outside (0, (n-1)/n]")));
    }
    let diag = 1.0 / nf + d;
    let off = (1.0 / nf - d / (nf - 1.0)).max(0.0);
    let m = SquareMatrix::from_fn(n, |i, j| if i == j { diag } else { off });
    StochasticMatrix::with_tolerance(m, 0.0, ROW_SUM_TOL)
}

/// `R = M^-1 N`.
///
/// `m_inv` is the inverse of a row-stochastic matrix, so `M^-1 1 = 1`. When `N`
/// has the target shape (constant diagonal `a`, constant off-diagonal `c`) this
/// gives `R = c J + (a - c) M^-1`, and the minimizing entry lands at zero to
/// rounding instead of carrying the inverse's row-sum error.
pub fn ratio_matrix(m_inv: &SquareMatrix, n_mat: &StochasticMatrix) -> Result<StochasticMatrix> {
    let n = m_inv.n;
    if n_mat.n() != n {
        return Err(Error::domain("dimension mismatch"));
    }
    let r = match target_shape(n_mat) {
        Some((diag, off)) => {
            SquareMatrix::from_fn(n, |i, j| off + (diag - off) * m_inv[(i, j)])
        }
        None => m_inv.mul(n_mat),
    };
    let lo = min_entry(&r);
    if lo < -RATIO_NEG_TOL {
        return Err(Error::InvariantViolation(format!(
            "ratio matrix has negative entry {lo:e}"
        )));
    }
    StochasticMatrix::with_tolerance(r, RATIO_NEG_TOL, RATIO_ROW_SUM_TOL)
        .map_err(|e| Error::InvariantViolation(e.to_string()))
}

fn target_shape(m: &SquareMatrix) -> Option<(f64, f64)> {
    let n = m.n;
    let diag = m[(0, 0)];
    let off = if n > 1 { m[(0, 1)] } else { 0.0 };
    for i in 0..n {
        for j in 0..n {
            let want = if i == j { diag } else { off };
            if m[(i, j)] != want {
                return None;
            }
        }
    }
    Some((diag, off))
}

/// `R` of a Householder QR with column pivoting, rows contiguous. `M` and
/// `R^T` share their singular values, and Jacobi on the rows of `R`
/// converges in far fewer sweeps than on `M` itself.
fn pivoted_r(m: &SquareMatrix) -> Vec<f64> {
    let n = m.n;
    let mut a = m.transpose().data;
    let mut norms: Vec<f64> = a.chunks(n).map(|c| dot(c, c)).collect();
    let mut v = vec![0.0; n];
    for k in 0..n {
        let p = (k..n).fold(k, |best, j| if norms[j] > norms[best] { j } else { best });
        if p != k {
            for i in 0..n {
                a.swap(k * n + i, p * n + i);
            }
            norms.swap(k, p);
        }
        let alpha = dot(&a[k * n + k..(k + 1) * n], &a[k * n + k..(k + 1) * n]).sqrt();
        if alpha == 0.0 {
            break;
        }
        let head = a[k * n + k];
        let sign = if head >= 0.0 { 1.0 } else { -1.0 };
        let v = &mut v[..n - k];
        v.copy_from_slice(&a[k * n + k..(k + 1) * n]);
        v[0] += sign * alpha;
        let vv = dot(v, v);
        a[k * n + k] = -sign * alpha;
        a[k * n + k + 1..(k + 1) * n].fill(0.0);
        for j in k + 1..n {
            let cj = &mut a[j * n + k..(j + 1) * n];
            let f = 2.0 * dot(v, cj) / vv;
            for (c, vi) in cj.iter_mut().zip(v.iter()) {
                *c -= f * vi;
            }
            norms[j] = dot(&cj[1..], &cj[1..]);
        }
    }
    let mut r = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            r[i * n + j] = a[j * n + i];
        }
    }
    r
}

/// Singular values in non-increasing order, by one-sided Jacobi rotations
/// after a pivoted QR step.
pub fn singular_values(m: &SquareMatrix) -> Result<Vec<f64>> {
    let n = m.n;
    let mut cols = pivoted_r(m);
    let mut norms = vec![0.0; n];
    let tol = f64::EPSILON * (n as f64).sqrt();
    let max_sweeps = 100 * n;
    let mut converged = n == 1;
    for _ in 0..max_sweeps {
        let mut rotated = false;
        // exact norms each sweep; within it they follow the rotation update
        for (v, c) in norms.iter_mut().zip(cols.chunks(n)) {
            *v = dot(c, c);
        }
        for p in 0..n {
            for q in p + 1..n {
                let (alpha, beta) = (norms[p], norms[q]);
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let (left, right) = cols.split_at_mut(q * n);
                let cp = &mut left[p * n..(p + 1) * n];
                let cq = &mut right[..n];
                let gamma = dot(cp, cq);
                if gamma.abs() <= tol * (alpha.sqrt() * beta.sqrt()) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
                    let (a, b) = (*x, *y);
                    *x = c * a - s * b;
                    *y = s * a + c * b;
                }
                norms[p] = (alpha - t * gamma).max(0.0);
                norms[q] = beta + t * gamma;
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Convergence { sweeps: max_sweeps });
    }
    let mut sv: Vec<f64> = cols.chunks(n).map(|c| dot(c, c).sqrt()).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(sv)
}

// four lanes so the loop vectorizes
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[2]) + (acc[1] + acc[3]) + tail
}

pub fn smallest_singular_value(m: &SquareMatrix) -> Result<f64> {
    Ok(*singular_values(m)?.last().expect("n >= 1"))
}

/// `n^5 (2 + 2 n^{3/2}) (1 - t n) / (n - 1)`: the query bound for Webb's
/// protocol when each near-exact division costs `n (2 + 2 n^{3/2}) / eps`.
pub fn webb_query_bound(n: usize, t: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::domain("webb_query_bound needs n >= 2"));
    }
    if !(t <= 0.0) {
        return Err(Error::domain(format!("t = {t} > 0")));
    }
    let nf = n as f64;
    Ok(nf.powi(5) * (2.0 + 2.0 * nf.powf(1.5)) * (1.0 - t * nf) / (nf - 1.0))
}

/// Result of [`sigma_query_bound`]. `n_in_range` is false below
/// [`SIGMA_BOUND_MIN_N`], where the bound is not established.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaBound {
    pub value: f64,
    pub n_in_range: bool,
}

/// `n^7 max(1, 1/sigma_n)`.
pub fn sigma_query_bound(n: usize, sigma_n: f64) -> Result<SigmaBound> {
    if !(sigma_n > 0.0) {
        return Err(Error::domain(format!("sigma_n = {sigma_n} must be positive")));
    }
    Ok(SigmaBound {
        value: (n as f64).powi(7) * (1.0 / sigma_n).max(1.0),
        n_in_range: n >= SIGMA_BOUND_MIN_N,
    })
}

/// Polynomial decay exponent `1 - (b - 1)/3` of `P(C >= n^{7+b})`.
pub fn tail_exponent(b: f64) -> Result<f64> {
    if !(b > 4.0) {
        return Err(Error::domain(format!("tail exponent needs b > 4, got {b}")));
    }
    Ok((4.0 - b) / 3.0)
}
