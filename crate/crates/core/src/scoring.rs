//! Gram determinant scores, their estimators, and the whitened-joint baselines.

use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{Labels, MisreportCounts};
use crate::error::{Error, Result};
use crate::kernels::{dot, kernel_eval, label_gram, KernelSpec, ObservationSet};
use crate::matcore::{Mat, PredicateKind, StructuralPredicate};
use crate::seeds::derive_seed;

const STOCHASTIC_TOL: f64 = 1e-12;
const RBF_CHUNK: usize = 128;

/// Column-stochastic `|Y|×d` experiment: column `x` is the distribution of
/// observations given true label `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentMatrix {
    p: Mat,
}

impl ExperimentMatrix {
    pub fn new(p: Mat) -> Result<Self> {
        let pred = StructuralPredicate::new(PredicateKind::ColumnStochastic, STOCHASTIC_TOL)?;
        if p.as_slice().iter().any(|&v| v < 0.0) || !p.matches(pred) {
            return Err(Error::InvalidArgument(
                "experiment matrix must be nonnegative with columns summing to 1".into(),
            ));
        }
        Ok(Self { p })
    }

    pub fn matrix(&self) -> &Mat {
        &self.p
    }

    /// Number of labels.
    pub fn d(&self) -> usize {
        self.p.cols()
    }

    /// Number of observation outcomes.
    pub fn k(&self) -> usize {
        self.p.rows()
    }

    /// Whether the columns are linearly independent (`det(PᵀP) > 1e-12`).
    pub fn columns_independent(&self) -> bool {
        self.p
            .t_matmul(&self.p)
            .and_then(|g| g.det())
            .map(|d| d > 1e-12)
            .unwrap_or(false)
    }
}

/// Nonnegative `|Y|×d` joint distribution of (observation, report).
#[derive(Debug, Clone, PartialEq)]
pub struct JointDistribution {
    j: Mat,
}

impl JointDistribution {
    pub fn new(j: Mat) -> Result<Self> {
        if j.as_slice().iter().any(|&v| v < 0.0) || (j.sum() - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::InvalidArgument(
                "joint distribution must be nonnegative and sum to 1".into(),
            ));
        }
        Ok(Self { j })
    }

    /// Normalised count matrix of (observation, report) pairs.
    pub fn empirical(report: &Labels, obs: &ObservationSet) -> Result<Self> {
        check_lengths(report, obs)?;
        let (ids, k) = match obs {
            ObservationSet::Categorical { ids, k } => (ids, *k),
            ObservationSet::Embedding { .. } => {
                return Err(Error::KernelDomain(
                    "the empirical joint needs categorical observations".into(),
                ))
            }
        };
        let d = report.d();
        let n = report.len() as f64;
        let mut j = Mat::zeros(k, d);
        for (&y, &x) in ids.iter().zip(report.values()) {
            j[(y - 1, x - 1)] += 1.0;
        }
        Self::new(j.scale(1.0 / n))
    }

    pub fn matrix(&self) -> &Mat {
        &self.j
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    PartialKnowledge,
    PlugIn,
    Stratified,
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plugin" | "plug-in" => Ok(Self::PlugIn),
            "stratified" => Ok(Self::Stratified),
            "partial-knowledge" => Ok(Self::PartialKnowledge),
            other => Err(Error::InvalidArgument(format!(
                "unknown estimator `{other}` (expected plugin | stratified)"
            ))),
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::PartialKnowledge => "partial-knowledge",
            Self::PlugIn => "plug-in",
            Self::Stratified => "stratified",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreReport {
    pub value: f64,
    pub estimator: Estimator,
    pub kernel: KernelSpec,
    pub seed: Option<u64>,
    pub n: usize,
    pub d: usize,
    pub min_occurrence: usize,
    pub degenerate: bool,
}

/// `det(Qᵀ G_K Q)` for a known experiment and a real-valued joint matrix `Q`,
/// evaluated as `det(G_K)·det(Q)²` so the conditioning of `Q` is not squared.
pub fn gram_score(
    p: &ExperimentMatrix,
    q: &Mat,
    kernel: &KernelSpec,
    kmat: Option<&Mat>,
) -> Result<f64> {
    if !q.is_square() || q.rows() != p.d() {
        return Err(Error::Dimension(format!(
            "misreport matrix is {}x{}, experiment has {} labels",
            q.rows(),
            q.cols(),
            p.d()
        )));
    }
    let g = label_gram(p, kernel, kmat)?;
    let dq = q.det()?;
    Ok(g.matrix().det()? * dq * dq)
}

/// [`gram_score`] on integer misreport counts.
pub fn gram_score_counts(
    p: &ExperimentMatrix,
    q: &MisreportCounts,
    kernel: &KernelSpec,
    kmat: Option<&Mat>,
) -> Result<f64> {
    gram_score(p, &q.q(), kernel, kmat)
}

fn check_lengths(report: &Labels, obs: &ObservationSet) -> Result<()> {
    if report.len() != obs.len() {
        return Err(Error::Shape(format!(
            "{} reports but {} observations",
            report.len(),
            obs.len()
        )));
    }
    Ok(())
}

/// The empirical kernel co-occurrence matrix
/// `Ḡ_K(x,x′) = N⁻² Σ_{x̂_n=x, x̂_n′=x′} K(y_n, y_n′)`, self-pairs included.
pub fn plugin_gram(report: &Labels, obs: &ObservationSet, kernel: &KernelSpec) -> Result<Mat> {
    check_lengths(report, obs)?;
    let d = report.d();
    obs.check_kernel(kernel, d)?;
    let n = report.len() as f64;
    let norm = 1.0 / (n * n);
    let g = match (kernel, obs) {
        (KernelSpec::Delta, ObservationSet::Categorical { ids, k }) => {
            let mut v = Mat::zeros(*k, d);
            for (&y, &x) in ids.iter().zip(report.values()) {
                v[(y - 1, x - 1)] += 1.0;
            }
            v.t_matmul(&v)?
        }
        (
            KernelSpec::Linear | KernelSpec::PseudoPosterior,
            ObservationSet::Embedding { width, data },
        ) => {
            let mut sums = Mat::zeros(d, *width);
            for (row, &x) in data.chunks(*width).zip(report.values()) {
                for (c, v) in row.iter().enumerate() {
                    sums[(x - 1, c)] += v;
                }
            }
            Mat::from_fn(d, d, |a, b| dot(sums.row(a), sums.row(b)))?
        }
        _ => pairwise_label_sums(report, obs, kernel)?,
    };
    Ok(g.scale(norm))
}

/// Generic `O(N²)` aggregation, parallel over fixed row blocks and summed in
/// block order so the result does not depend on the thread count.
fn pairwise_label_sums(report: &Labels, obs: &ObservationSet, kernel: &KernelSpec) -> Result<Mat> {
    let d = report.d();
    let labels = report.values();
    let n = labels.len();
    let blocks: Vec<Result<Vec<f64>>> = (0..n.div_ceil(RBF_CHUNK))
        .into_par_iter()
        .map(|b| {
            let mut acc = vec![0.0; d * d];
            for i in (b * RBF_CHUNK)..((b + 1) * RBF_CHUNK).min(n) {
                let yi = obs.get(i);
                let row = &mut acc[(labels[i] - 1) * d..labels[i] * d];
                for j in 0..n {
                    row[labels[j] - 1] += kernel_eval(kernel, yi, obs.get(j))?;
                }
            }
            Ok(acc)
        })
        .collect();
    let mut total = vec![0.0; d * d];
    for block in blocks {
        for (t, v) in total.iter_mut().zip(block?) {
            *t += v;
        }
    }
    Mat::new(d, d, total)
}

pub fn plugin_score(
    report: &Labels,
    obs: &ObservationSet,
    kernel: &KernelSpec,
) -> Result<ScoreReport> {
    let g = plugin_gram(report, obs, kernel)?;
    let occ = report.occurrences();
    let min_occurrence = occ.iter().copied().min().unwrap_or(0);
    let degenerate = min_occurrence == 0;
    let value = if degenerate { 0.0 } else { g.det()? };
    Ok(ScoreReport {
        value,
        estimator: Estimator::PlugIn,
        kernel: *kernel,
        seed: None,
        n: report.len(),
        d: report.d(),
        min_occurrence,
        degenerate,
    })
}

/// One draw of the stratified-matching estimator.
pub fn stratified_score(
    report: &Labels,
    obs: &ObservationSet,
    kernel: &KernelSpec,
    seed: u64,
) -> Result<ScoreReport> {
    check_lengths(report, obs)?;
    let d = report.d();
    obs.check_kernel(kernel, d)?;
    let occ = report.occurrences();
    let min_occurrence = occ.iter().copied().min().unwrap_or(0);
    let mut out = ScoreReport {
        value: 0.0,
        estimator: Estimator::Stratified,
        kernel: *kernel,
        seed: Some(seed),
        n: report.len(),
        d,
        min_occurrence,
        degenerate: min_occurrence < 2,
    };
    if out.degenerate {
        return Ok(out);
    }

    let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); d];
    for (n, &x) in report.values().iter().enumerate() {
        by_label[x - 1].push(n);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let col: Vec<usize> = by_label
        .iter()
        .map(|idx| *idx.choose(&mut rng).expect("label occurs"))
        .collect();
    let row: Vec<usize> = by_label
        .iter()
        .zip(&col)
        .map(|(idx, &c)| {
            let pos = rand::Rng::random_range(&mut rng, 0..idx.len() - 1);
            // skip over the record already taken for Col
            let candidate = idx[pos];
            if candidate == c {
                idx[idx.len() - 1]
            } else {
                candidate
            }
        })
        .collect();
    let mut sigma: Vec<usize> = (0..d).collect();
    sigma.shuffle(&mut rng);

    let q: Vec<f64> = occ
        .iter()
        .map(|&c| c as f64 / report.len() as f64)
        .collect();
    let mut value = factorial(d) * permutation_sign(&sigma);
    for i in 0..d {
        let j = sigma[i];
        value *= kernel_eval(kernel, obs.get(row[i]), obs.get(col[j]))? * q[i] * q[j];
    }
    out.value = value;
    Ok(out)
}

/// Mean and standard error of `reps` independent stratified draws whose
/// seeds are derived from `seed`.
pub fn stratified_repeated(
    report: &Labels,
    obs: &ObservationSet,
    kernel: &KernelSpec,
    seed: u64,
    reps: usize,
) -> Result<(ScoreReport, f64)> {
    if reps == 0 {
        return Err(Error::InvalidArgument(
            "repetition count must be >= 1".into(),
        ));
    }
    if reps == 1 {
        return Ok((stratified_score(report, obs, kernel, seed)?, 0.0));
    }
    let draws: Vec<ScoreReport> = (0..reps)
        .into_par_iter()
        .map(|r| stratified_score(report, obs, kernel, derive_seed(seed, r as u64)))
        .collect::<Result<_>>()?;
    let values: Vec<f64> = draws.iter().map(|r| r.value).collect();
    let (mean, se) = mean_and_stderr(&values);
    let mut out = draws.into_iter().next().expect("reps >= 1");
    out.value = mean;
    out.seed = Some(seed);
    Ok((out, se))
}

/// Sample mean and standard error (sample standard deviation over `√M`).
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let m = values.len();
    if m == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / m as f64;
    if m < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1) as f64;
    (mean, (var / m as f64).sqrt())
}

pub fn factorial(d: usize) -> f64 {
    (1..=d).map(|v| v as f64).product()
}

/// Sign of a permutation given as an image list.
pub fn permutation_sign(sigma: &[usize]) -> f64 {
    let mut seen = vec![false; sigma.len()];
    let mut sign = 1.0;
    for start in 0..sigma.len() {
        if seen[start] {
            continue;
        }
        let mut len = 0;
        let mut i = start;
        while !seen[i] {
            seen[i] = true;
            i = sigma[i];
            len += 1;
        }
        if len % 2 == 0 {
            sign = -sign;
        }
    }
    sign
}

/// Whitened joint together with the observation rows and report columns
/// dropped for having zero marginal (0-based indices into the input).
#[derive(Debug, Clone, PartialEq)]
pub struct Whitened {
    pub matrix: Mat,
    pub dropped_rows: Vec<usize>,
    pub dropped_cols: Vec<usize>,
}

/// `D_y^{-1/2} (J − μ_y μ_x̂ᵀ) D_x̂^{-1/2}` over the rows and columns with
/// positive marginal.
pub fn whiten(j: &JointDistribution) -> Whitened {
    let jm = j.matrix();
    let mu_y = jm.row_sums();
    let mu_x = jm.col_sums();
    let keep_rows: Vec<usize> = (0..jm.rows()).filter(|&r| mu_y[r] > 0.0).collect();
    let keep_cols: Vec<usize> = (0..jm.cols()).filter(|&c| mu_x[c] > 0.0).collect();
    let matrix = Mat::from_fn(keep_rows.len(), keep_cols.len(), |a, b| {
        let (r, c) = (keep_rows[a], keep_cols[b]);
        (jm[(r, c)] - mu_y[r] * mu_x[c]) / (mu_y[r] * mu_x[c]).sqrt()
    })
    .expect("positive marginals keep entries finite");
    Whitened {
        matrix,
        dropped_rows: (0..jm.rows()).filter(|&r| mu_y[r] <= 0.0).collect(),
        dropped_cols: (0..jm.cols()).filter(|&c| mu_x[c] <= 0.0).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    TopkVolume { k: usize },
    MaxCorrelation,
    KyFan { k: usize },
    Chi2Mi,
    KlMi,
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::TopkVolume { k } => write!(f, "topk-volume:{k}"),
            Self::MaxCorrelation => write!(f, "max-correlation"),
            Self::KyFan { k } => write!(f, "kyfan:{k}"),
            Self::Chi2Mi => write!(f, "chi2-mi"),
            Self::KlMi => write!(f, "kl-mi"),
        }
    }
}

/// Baseline kind as written on the command line; `topk-volume` and `kyfan`
/// may omit `k`, which then defaults to `d − 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BaselineRequest {
    name: BaselineName,
    k: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BaselineName {
    TopkVolume,
    MaxCorrelation,
    KyFan,
    Chi2Mi,
    KlMi,
}

impl FromStr for BaselineRequest {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (head, k) = match s.split_once(':') {
            Some((h, k)) => {
                let k: usize = k
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("cannot parse k in `{s}`")))?;
                (h, Some(k))
            }
            None => (s, None),
        };
        let name = match head {
            "topk-volume" => BaselineName::TopkVolume,
            "max-correlation" => BaselineName::MaxCorrelation,
            "kyfan" => BaselineName::KyFan,
            "chi2-mi" => BaselineName::Chi2Mi,
            "kl-mi" => BaselineName::KlMi,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown score kind `{other}` (expected topk-volume[:K] | max-correlation | kyfan[:K] | chi2-mi | kl-mi)"
                )))
            }
        };
        if k.is_some() && !matches!(name, BaselineName::TopkVolume | BaselineName::KyFan) {
            return Err(Error::InvalidArgument(format!(
                "`{head}` takes no k parameter"
            )));
        }
        Ok(Self { name, k })
    }
}

impl BaselineRequest {
    pub fn resolve(&self, d: usize) -> BaselineKind {
        let k = self.k.unwrap_or(d.saturating_sub(1).max(1));
        match self.name {
            BaselineName::TopkVolume => BaselineKind::TopkVolume { k },
            BaselineName::MaxCorrelation => BaselineKind::MaxCorrelation,
            BaselineName::KyFan => BaselineKind::KyFan { k },
            BaselineName::Chi2Mi => BaselineKind::Chi2Mi,
            BaselineName::KlMi => BaselineKind::KlMi,
        }
    }
}

pub fn baseline_score(j: &JointDistribution, kind: BaselineKind) -> Result<f64> {
    if let BaselineKind::KlMi = kind {
        return Ok(kl_mutual_information(j));
    }
    let w = whiten(j).matrix;
    let dims = w.rows().min(w.cols());
    let check_k = |k: usize| {
        if k == 0 || k > dims {
            Err(Error::InvalidArgument(format!(
                "k = {k} must lie in 1..={dims} for this joint"
            )))
        } else {
            Ok(())
        }
    };
    match kind {
        BaselineKind::TopkVolume { k } => {
            check_k(k)?;
            Ok(w.singular_values().iter().take(k).product())
        }
        BaselineKind::KyFan { k } => {
            check_k(k)?;
            Ok(w.singular_values().iter().take(k).sum())
        }
        BaselineKind::MaxCorrelation => Ok(w.singular_values().first().copied().unwrap_or(0.0)),
        BaselineKind::Chi2Mi => Ok(w.frobenius_sq()),
        BaselineKind::KlMi => unreachable!(),
    }
}

fn kl_mutual_information(j: &JointDistribution) -> f64 {
    let jm = j.matrix();
    let mu_y = jm.row_sums();
    let mu_x = jm.col_sums();
    let mut total = 0.0;
    for r in 0..jm.rows() {
        for c in 0..jm.cols() {
            let v = jm[(r, c)];
            if v > 0.0 {
                total += v * (v / (mu_y[r] * mu_x[c])).ln();
            }
        }
    }
    total
}
