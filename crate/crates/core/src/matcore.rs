//! Small dense real matrices.
//!
//! Everything here is sized for label spaces of a few dozen classes at most:
//! determinants go through LU with partial pivoting, singular values through
//! one-sided Jacobi, and the spectral norm through power iteration on `mᵀm`.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Default tolerance for structural predicates.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Pivots below this fraction of the largest entry are treated as exact zeros.
const PIVOT_RELATIVE_TOL: f64 = 1e-14;

/// Relative threshold on `|det|` below which a matrix is not inverted.
const SINGULAR_RELATIVE_TOL: f64 = 1e-12;

const JACOBI_MAX_SWEEPS: usize = 80;
const POWER_MAX_ITERS: usize = 500;
const POWER_SQUARINGS: usize = 24;

/// Row-major dense matrix with finite entries.
#[derive(Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} entries supplied for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / cols.max(1),
                col: pos % cols.max(1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Builds a matrix from a slice of equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != n_cols {
                return Err(Error::Dimension(format!(
                    "row {i} has {} entries, expected {n_cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(n_rows, n_cols, data)
    }

    pub fn from_fn(
        rows: usize,
        cols: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::new(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, rhs: &Mat) -> Result<Mat> {
        if self.cols != rhs.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let rhs_row = rhs.row(k);
                let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · rhs` without materialising the transpose.
    pub fn t_matmul(&self, rhs: &Mat) -> Result<Mat> {
        self.transpose().matmul(rhs)
    }

    pub fn scale(&self, factor: f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn sub(&self, rhs: &Mat) -> Result<Mat> {
        self.zip_with(rhs, |a, b| a - b)
    }

    pub fn add(&self, rhs: &Mat) -> Result<Mat> {
        self.zip_with(rhs, |a, b| a + b)
    }

    fn zip_with(&self, rhs: &Mat, f: impl Fn(f64, f64) -> f64) -> Result<Mat> {
        if self.rows != rhs.rows || self.cols != rhs.cols {
            return Err(Error::Dimension(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        Ok(Mat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    /// Largest absolute entry of `self - rhs`.
    pub fn max_abs_diff(&self, rhs: &Mat) -> Result<f64> {
        Ok(self.sub(rhs)?.max_abs())
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (s, v) in sums.iter_mut().zip(self.row(i)) {
                *s += v;
            }
        }
        sums
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    fn require_square(&self, what: &str) -> Result<()> {
        if self.is_square() {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "{what} requires a square matrix, got {}x{}",
                self.rows, self.cols
            )))
        }
    }

    /// Determinant via LU factorisation with partial pivoting.
    ///
    /// Returns exactly `0.0` once a pivot column has no entry above
    /// `1e-14 · max|entry|`.
    pub fn det(&self) -> Result<f64> {
        self.require_square("det")?;
        let n = self.rows;
        if n == 0 {
            return Ok(1.0);
        }
        let scale = self.max_abs();
        if scale == 0.0 {
            return Ok(0.0);
        }
        let tol = PIVOT_RELATIVE_TOL * scale;
        let mut a = self.data.clone();
        let mut det = 1.0;
        for k in 0..n {
            let (p, pivot) =
                (k..n)
                    .map(|i| (i, a[i * n + k].abs()))
                    .fold(
                        (k, -1.0),
                        |best, cur| if cur.1 > best.1 { cur } else { best },
                    );
            if pivot <= tol {
                return Ok(0.0);
            }
            if p != k {
                for j in 0..n {
                    a.swap(p * n + j, k * n + j);
                }
                det = -det;
            }
            let akk = a[k * n + k];
            det *= akk;
            for i in (k + 1)..n {
                let f = a[i * n + k] / akk;
                if f == 0.0 {
                    continue;
                }
                for j in (k + 1)..n {
                    a[i * n + j] -= f * a[k * n + j];
                }
            }
        }
        Ok(det)
    }

    /// Inverse by Gauss-Jordan elimination with partial pivoting.
    pub fn inverse(&self) -> Result<Mat> {
        self.require_square("inverse")?;
        let n = self.rows;
        let det = self.det()?;
        let threshold = SINGULAR_RELATIVE_TOL * self.max_abs().powi(n as i32);
        if !(det.abs() > threshold) {
            return Err(Error::Singular { det, threshold });
        }
        let mut a = self.data.clone();
        let mut inv = Mat::identity(n).data;
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| a[i * n + k].abs().total_cmp(&a[j * n + k].abs()))
                .unwrap_or(k);
            if p != k {
                for j in 0..n {
                    a.swap(p * n + j, k * n + j);
                    inv.swap(p * n + j, k * n + j);
                }
            }
            let akk = a[k * n + k];
            for j in 0..n {
                a[k * n + j] /= akk;
                inv[k * n + j] /= akk;
            }
            for i in 0..n {
                if i == k {
                    continue;
                }
                let f = a[i * n + k];
                if f == 0.0 {
                    continue;
                }
                for j in 0..n {
                    a[i * n + j] -= f * a[k * n + j];
                    inv[i * n + j] -= f * inv[k * n + j];
                }
            }
        }
        Mat::new(n, n, inv)
    }

    /// Largest singular value.
    ///
    /// Power iteration on `mᵀm` from the normalised all-ones vector. The
    /// operator is first squared repeatedly (with renormalisation) so each
    /// iteration advances the power sequence by `2^24` steps; near-degenerate
    /// top singular values still converge within the iteration budget. If the
    /// start vector is annihilated, the heaviest column of the squared
    /// operator is used instead.
    pub fn spectral_norm(&self) -> f64 {
        let scale = self.max_abs();
        if scale == 0.0 || self.rows == 0 || self.cols == 0 {
            return 0.0;
        }
        let normalized = self.scale(1.0 / scale);
        let gram = normalized
            .transpose()
            .matmul(&normalized)
            .expect("shapes agree");
        let n = gram.rows;

        let mut op = gram.clone();
        for _ in 0..POWER_SQUARINGS {
            let sq = op.matmul(&op).expect("square");
            let s = sq.max_abs();
            if s == 0.0 {
                break;
            }
            op = sq.scale(1.0 / s);
        }

        let mut v = vec![1.0 / (n as f64).sqrt(); n];
        let mut lambda = 0.0;
        for iter in 0..POWER_MAX_ITERS {
            let mut w = mat_vec(&op, &v);
            let mut norm = l2(&w);
            if norm <= 1e-300 && iter == 0 {
                // start vector orthogonal to the dominant eigenspace
                let j = (0..n)
                    .max_by(|&a, &b| l2(&op.column(a)).total_cmp(&l2(&op.column(b))))
                    .unwrap_or(0);
                w = op.column(j);
                norm = l2(&w);
            }
            if norm == 0.0 {
                return 0.0;
            }
            for x in w.iter_mut() {
                *x /= norm;
            }
            let gw = mat_vec(&gram, &w);
            let next = dot(&w, &gw);
            let converged = (next - lambda).abs() <= 1e-15 * next.abs();
            lambda = next;
            v = w;
            if converged {
                break;
            }
        }
        lambda.max(0.0).sqrt() * scale
    }

    /// All `min(rows, cols)` singular values in descending order, computed
    /// with one-sided Jacobi rotations.
    pub fn singular_values(&self) -> Vec<f64> {
        let tall = if self.rows >= self.cols {
            self.clone()
        } else {
            self.transpose()
        };
        let (m, n) = (tall.rows, tall.cols);
        let mut columns: Vec<Vec<f64>> = (0..n).map(|j| tall.column(j)).collect();

        for _ in 0..JACOBI_MAX_SWEEPS {
            let mut rotated = false;
            for p in 0..n {
                for q in (p + 1)..n {
                    let alpha = dot(&columns[p], &columns[p]);
                    let beta = dot(&columns[q], &columns[q]);
                    let gamma = dot(&columns[p], &columns[q]);
                    if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                        continue;
                    }
                    rotated = true;
                    let zeta = (beta - alpha) / (2.0 * gamma);
                    let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    let (left, right) = columns.split_at_mut(q);
                    let (cp, cq) = (&mut left[p], &mut right[0]);
                    for i in 0..m {
                        let bp = cp[i];
                        let bq = cq[i];
                        cp[i] = c * bp - s * bq;
                        cq[i] = s * bp + c * bq;
                    }
                }
            }
            if !rotated {
                break;
            }
        }

        let mut sv: Vec<f64> = columns.iter().map(|c| l2(c)).collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        sv
    }

    /// Eigenvalues of a symmetric matrix (cyclic Jacobi), descending.
    ///
    /// Only the lower triangle's symmetry is assumed, not checked.
    pub fn symmetric_eigenvalues(&self) -> Result<Vec<f64>> {
        self.require_square("symmetric_eigenvalues")?;
        let n = self.rows;
        let mut a = self.clone();
        let total = a.frobenius_sq();
        for _ in 0..JACOBI_MAX_SWEEPS {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[(i, j)] * a[(i, j)])
                .sum();
            if off <= 1e-30 * total || off == 0.0 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[(p, q)];
                    if apq == 0.0 {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                    let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                    let t = sign / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
        ev.sort_by(|x, y| y.total_cmp(x));
        Ok(ev)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.is_square()
            && (0..self.rows).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    pub fn matches(&self, predicate: StructuralPredicate) -> bool {
        let tol = predicate.tolerance;
        let n = self.rows;
        match predicate.kind {
            PredicateKind::ColumnStochastic => {
                self.data.iter().all(|&v| v >= -tol)
                    && self.col_sums().iter().all(|s| (s - 1.0).abs() <= tol)
            }
            PredicateKind::RowDiagonallyMaximal => {
                self.is_square()
                    && (0..n).all(|i| (0..n).all(|j| self[(i, j)] <= self[(i, i)] + tol))
            }
            PredicateKind::RowDiagonallyDominant => {
                self.is_square()
                    && (0..n).all(|i| {
                        let off: f64 = (0..n).filter(|&j| j != i).map(|j| self[(i, j)].abs()).sum();
                        off <= self[(i, i)].abs() + tol
                    })
            }
            PredicateKind::Permutation => {
                let near = |v: f64, target: f64| (v - target).abs() <= tol;
                let unit_line = |vals: &mut dyn Iterator<Item = f64>| {
                    let mut ones = 0;
                    for v in vals {
                        if near(v, 1.0) {
                            ones += 1;
                        } else if !near(v, 0.0) {
                            return false;
                        }
                    }
                    ones == 1
                };
                self.is_square()
                    && (0..n).all(|i| unit_line(&mut self.row(i).iter().copied()))
                    && (0..n).all(|j| unit_line(&mut (0..n).map(|i| self[(i, j)])))
            }
            PredicateKind::Identity => {
                self.is_square()
                    && (0..n).all(|i| {
                        (0..n).all(|j| {
                            let target = if i == j { 1.0 } else { 0.0 };
                            (self[(i, j)] - target).abs() <= tol
                        })
                    })
            }
        }
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Mat {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredicateKind {
    ColumnStochastic,
    RowDiagonallyMaximal,
    RowDiagonallyDominant,
    Permutation,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructuralPredicate {
    pub kind: PredicateKind,
    pub tolerance: f64,
}

impl StructuralPredicate {
    pub fn new(kind: PredicateKind, tolerance: f64) -> Result<Self> {
        if !(tolerance >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "predicate tolerance must be >= 0, got {tolerance}"
            )));
        }
        Ok(Self { kind, tolerance })
    }

    pub fn with_default_tol(kind: PredicateKind) -> Self {
        Self {
            kind,
            tolerance: DEFAULT_TOL,
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn l2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn mat_vec(m: &Mat, v: &[f64]) -> Vec<f64> {
    (0..m.rows).map(|i| dot(m.row(i), v)).collect()
}
