//! Label sequences, misreport matrices, matrix classes and reliability orderings.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matcore::{Mat, PredicateKind, StructuralPredicate, DEFAULT_TOL};

/// Absolute slack used by the class tests that compare marginals.
const CLASS_SLACK: f64 = 1e-12;

/// A sequence of 1-based label ids over an alphabet of size `d`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Labels {
    values: Vec<usize>,
    d: usize,
}

impl Labels {
    pub fn new(values: Vec<usize>, d: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Shape("label sequence is empty".into()));
        }
        if d == 0 {
            return Err(Error::InvalidArgument(
                "label alphabet size must be >= 1".into(),
            ));
        }
        if let Some((pos, v)) = values.iter().enumerate().find(|(_, &v)| v == 0 || v > d) {
            return Err(Error::InvalidArgument(format!(
                "label {v} at position {pos} is outside 1..={d}"
            )));
        }
        Ok(Self { values, d })
    }

    pub fn values(&self) -> &[usize] {
        &self.values
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same values over a larger alphabet.
    pub fn with_alphabet(&self, d: usize) -> Result<Self> {
        Self::new(self.values.clone(), d)
    }

    /// Occurrence count of each label, indexed 0..d.
    pub fn occurrences(&self) -> Vec<usize> {
        let mut occ = vec![0; self.d];
        for &v in &self.values {
            occ[v - 1] += 1;
        }
        occ
    }

    /// Empirical label frequencies.
    pub fn frequencies(&self) -> Vec<f64> {
        let n = self.len() as f64;
        self.occurrences()
            .into_iter()
            .map(|c| c as f64 / n)
            .collect()
    }
}

fn check_same_shape(a: &Labels, b: &Labels) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "label sequences have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.d() != b.d() {
        return Err(Error::Shape(format!(
            "label alphabets have sizes {} and {}",
            a.d(),
            b.d()
        )));
    }
    Ok(())
}

/// Integer joint counts of (true label, reported label) pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MisreportCounts {
    d: usize,
    counts: Vec<u64>,
    n_total: u64,
}

impl MisreportCounts {
    /// Builds counts from a `d×d` table; row = true label, column = report.
    pub fn from_counts<R: AsRef<[u64]>>(rows: &[R]) -> Result<Self> {
        let d = rows.len();
        let mut counts = Vec::with_capacity(d * d);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != d {
                return Err(Error::Dimension(format!(
                    "count row {i} has {} entries, expected {d}",
                    r.len()
                )));
            }
            counts.extend_from_slice(r);
        }
        let n_total: u64 = counts.iter().sum();
        if n_total == 0 {
            return Err(Error::InvalidArgument("count table is empty".into()));
        }
        Ok(Self { d, counts, n_total })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n_total(&self) -> u64 {
        self.n_total
    }

    /// Count for 0-based true label `i` and reported label `j`.
    pub fn count(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.d + j]
    }

    pub fn to_rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.d).map(|c| c.to_vec()).collect()
    }

    /// Number of records whose report differs from the truth.
    pub fn mismatches(&self) -> u64 {
        self.n_total - (0..self.d).map(|i| self.count(i, i)).sum::<u64>()
    }

    /// The joint frequency matrix `Q = counts / N`.
    pub fn q(&self) -> Mat {
        let n = self.n_total as f64;
        Mat::new(
            self.d,
            self.d,
            self.counts.iter().map(|&c| c as f64 / n).collect(),
        )
        .expect("counts are finite")
    }

    /// `Tr(Q)`, computed from integer counts.
    pub fn trace(&self) -> f64 {
        (self.n_total - self.mismatches()) as f64 / self.n_total as f64
    }

    /// Expands the counts into a (truth, report) pair of label sequences,
    /// grouped by true label then reported label.
    pub fn realize(&self) -> (Labels, Labels) {
        let mut truth = Vec::with_capacity(self.n_total as usize);
        let mut report = Vec::with_capacity(self.n_total as usize);
        for i in 0..self.d {
            for j in 0..self.d {
                for _ in 0..self.count(i, j) {
                    truth.push(i + 1);
                    report.push(j + 1);
                }
            }
        }
        (
            Labels::new(truth, self.d).expect("non-empty"),
            Labels::new(report, self.d).expect("non-empty"),
        )
    }
}

pub fn misreport_matrix(truth: &Labels, report: &Labels) -> Result<MisreportCounts> {
    check_same_shape(truth, report)?;
    let d = truth.d();
    let mut counts = vec![0u64; d * d];
    for (&x, &xh) in truth.values().iter().zip(report.values()) {
        counts[(x - 1) * d + (xh - 1)] += 1;
    }
    Ok(MisreportCounts {
        d,
        counts,
        n_total: truth.len() as u64,
    })
}

/// Marginals and conditionals of a joint frequency matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyDecomposition {
    pub q_x: Vec<f64>,
    pub q_xhat: Vec<f64>,
    /// Column `i` is the distribution of the report given true label `i`.
    pub q_xhat_given_x: Mat,
    /// Column `j` is the distribution of the truth given report `j`.
    pub q_x_given_xhat: Mat,
}

pub fn decompose(q: &MisreportCounts) -> FrequencyDecomposition {
    decompose_joint(&q.q())
}

/// Decomposes any nonnegative square joint matrix; zero-marginal columns of
/// the conditionals are filled with `1/d`.
pub fn decompose_joint(q: &Mat) -> FrequencyDecomposition {
    let d = q.rows();
    let q_x = q.row_sums();
    let q_xhat = q.col_sums();
    let uniform = 1.0 / d as f64;
    let q_xhat_given_x = Mat::from_fn(d, d, |j, i| {
        if q_x[i] > 0.0 {
            q[(i, j)] / q_x[i]
        } else {
            uniform
        }
    })
    .expect("finite");
    let q_x_given_xhat = Mat::from_fn(d, d, |i, j| {
        if q_xhat[j] > 0.0 {
            q[(i, j)] / q_xhat[j]
        } else {
            uniform
        }
    })
    .expect("finite");
    FrequencyDecomposition {
        q_x,
        q_xhat,
        q_xhat_given_x,
        q_x_given_xhat,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MatrixClass {
    NonPerm,
    Reg,
    Dom,
    Balanced { l: f64 },
    BalancedDelta { l: f64, delta: f64 },
}

impl MatrixClass {
    pub fn balanced(l: f64) -> Result<Self> {
        check_l(l)?;
        Ok(Self::Balanced { l })
    }

    pub fn balanced_delta(l: f64, delta: f64) -> Result<Self> {
        check_l(l)?;
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "delta must lie in (0, 1], got {delta}"
            )));
        }
        Ok(Self::BalancedDelta { l, delta })
    }
}

fn check_l(l: f64) -> Result<()> {
    if l >= 1.0 && l.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("L must be >= 1, got {l}")))
    }
}

pub fn class_member(q: &MisreportCounts, class: MatrixClass) -> bool {
    class_member_joint(&q.q(), class)
}

/// Class test on a real-valued joint matrix.
pub fn class_member_joint(q: &Mat, class: MatrixClass) -> bool {
    let pred = StructuralPredicate::with_default_tol;
    match class {
        MatrixClass::NonPerm => {
            let cond = decompose_joint(q).q_xhat_given_x;
            !cond.matches(pred(PredicateKind::Permutation))
        }
        MatrixClass::Reg => {
            let invertible = q.det().map(|d| d.abs() > 1e-12).unwrap_or(false);
            invertible && q.matches(pred(PredicateKind::RowDiagonallyMaximal))
        }
        MatrixClass::Dom => q.matches(pred(PredicateKind::RowDiagonallyDominant)),
        MatrixClass::Balanced { l } => {
            class_member_joint(q, MatrixClass::Dom) && is_balanced(&q.row_sums(), l)
        }
        MatrixClass::BalancedDelta { l, delta } => {
            class_member_joint(q, MatrixClass::Balanced { l })
                && 1.0 - q.trace() <= delta + CLASS_SLACK
        }
    }
}

fn is_balanced(q_x: &[f64], l: f64) -> bool {
    q_x.iter()
        .all(|&a| q_x.iter().all(|&b| a <= l * b + CLASS_SLACK))
}

/// Symmetric nonnegative distance table with zero diagonal and positive
/// off-diagonal entries.
#[derive(Debug, Clone, PartialEq)]
pub struct DistTable {
    table: Mat,
}

impl DistTable {
    pub fn new(table: Mat) -> Result<Self> {
        if !table.is_square() {
            return Err(Error::Dimension("distance table must be square".into()));
        }
        let d = table.rows();
        for i in 0..d {
            if table[(i, i)] != 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "distance table diagonal entry {} is nonzero",
                    i + 1
                )));
            }
            for j in 0..i {
                if table[(i, j)] != table[(j, i)] || table[(i, j)] <= 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "distance table entry ({}, {}) must be positive and symmetric",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(Self { table })
    }

    /// The 0/1 table, under which `dist_sum` is the Hamming distance.
    pub fn hamming(d: usize) -> Self {
        Self {
            table: Mat::from_fn(d, d, |i, j| if i == j { 0.0 } else { 1.0 }).expect("finite"),
        }
    }

    /// `|i - j|` on label ids.
    pub fn absolute(d: usize) -> Self {
        Self {
            table: Mat::from_fn(d, d, |i, j| (i as f64 - j as f64).abs()).expect("finite"),
        }
    }

    pub fn d(&self) -> usize {
        self.table.rows()
    }

    /// Distance between 1-based labels.
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.table[(a - 1, b - 1)]
    }

    /// Ratio of the largest to the smallest off-diagonal distance.
    pub fn aspect_ratio(&self) -> f64 {
        let d = self.d();
        let off = (0..d).flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)));
        let (lo, hi) = off.fold((f64::INFINITY, 0.0_f64), |(lo, hi), (i, j)| {
            let v = self.table[(i, j)];
            (lo.min(v), hi.max(v))
        });
        if d < 2 {
            1.0
        } else {
            hi / lo
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OrderingSpec {
    Exact,
    Blackwell,
    Hamming { alpha: f64 },
    Dist { table: DistTable, alpha: f64 },
}

impl OrderingSpec {
    pub fn hamming(alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Self::Hamming { alpha })
    }

    pub fn dist(table: DistTable, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Self::Dist { table, alpha })
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "alpha must lie in (0, 1], got {alpha}"
        )))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlackwellWitness {
    pub t: Mat,
    pub is_witness: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderingVerdict {
    pub holds: bool,
    pub witness: Option<BlackwellWitness>,
}

impl OrderingVerdict {
    fn plain(holds: bool) -> Self {
        Self {
            holds,
            witness: None,
        }
    }
}

/// Decides whether report `a` is strictly more reliable than report `b`
/// with respect to `truth` under the given ordering.
pub fn ordering_holds(
    truth: &Labels,
    a: &Labels,
    b: &Labels,
    spec: &OrderingSpec,
) -> Result<OrderingVerdict> {
    check_same_shape(truth, a)?;
    check_same_shape(truth, b)?;
    match spec {
        OrderingSpec::Exact => Ok(OrderingVerdict::plain(a == truth && b != truth)),
        OrderingSpec::Hamming { alpha } => {
            let da = hamming_distance(a, truth)? as f64;
            let db = hamming_distance(b, truth)? as f64;
            Ok(OrderingVerdict::plain(da < alpha * db))
        }
        OrderingSpec::Dist { table, alpha } => {
            let da = dist_sum(a, truth, table)?;
            let db = dist_sum(b, truth, table)?;
            Ok(OrderingVerdict::plain(da < alpha * db))
        }
        OrderingSpec::Blackwell => {
            let qa = misreport_matrix(truth, a)?.q();
            let qb = misreport_matrix(truth, b)?.q();
            Ok(blackwell_joint(&qa, &qb))
        }
    }
}

/// Blackwell test on real-valued joint matrices sharing a true marginal.
pub fn blackwell_joint(qa: &Mat, qb: &Mat) -> OrderingVerdict {
    if !class_member_joint(qa, MatrixClass::Reg) || !class_member_joint(qb, MatrixClass::Reg) {
        return OrderingVerdict::plain(false);
    }
    let ca = decompose_joint(qa).q_xhat_given_x;
    let cb = decompose_joint(qb).q_xhat_given_x;
    let inv = match ca.inverse() {
        Ok(inv) => inv,
        Err(_) => return OrderingVerdict::plain(false),
    };
    let t = cb.matmul(&inv).expect("square matrices of equal size");
    let stochastic = t.matches(StructuralPredicate::with_default_tol(
        PredicateKind::ColumnStochastic,
    ));
    let identity =
        t.matches(StructuralPredicate::new(PredicateKind::Identity, DEFAULT_TOL).expect("valid"));
    let is_witness = stochastic && !identity;
    OrderingVerdict {
        holds: is_witness,
        witness: Some(BlackwellWitness { t, is_witness }),
    }
}

pub fn hamming_distance(a: &Labels, b: &Labels) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "label sequences have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.values()
        .iter()
        .zip(b.values())
        .filter(|(x, y)| x != y)
        .count())
}

pub fn dist_sum(a: &Labels, b: &Labels, table: &DistTable) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "label sequences have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let d = table.d();
    if a.d() > d || b.d() > d {
        return Err(Error::Shape(format!(
            "distance table covers {d} labels, sequences use {} and {}",
            a.d(),
            b.d()
        )));
    }
    Ok(a.values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| table.get(x, y))
        .sum())
}
