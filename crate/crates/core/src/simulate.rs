//! Synthetic experiments: random experiment matrices, observation sampling,
//! label corruption policies and seeded trial batches.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{hamming_distance, Labels};
use crate::error::{Error, Result};
use crate::kernels::{KernelRequest, KernelSpec, ObservationSet};
use crate::matcore::Mat;
use crate::scoring::{
    mean_and_stderr, plugin_score, stratified_score, Estimator, ExperimentMatrix,
};
use crate::seeds::{derive_path, derive_seed};

// Stream tags under the master seed.
const STREAM_TRUTH: u64 = 1;
const STREAM_EXPERIMENT: u64 = 2;
const STREAM_OBSERVATIONS: u64 = 3;
const STREAM_TRIALS: u64 = 4;
const STREAM_MEANS: u64 = 5;

const ASYM_NEIGHBOR_PROB: f64 = 0.85;

/// `k×d` experiment with i.i.d. uniform entries, columns normalised.
pub fn random_experiment(d: usize, k: usize, seed: u64) -> Result<ExperimentMatrix> {
    if d == 0 || k == 0 {
        return Err(Error::InvalidArgument(
            "experiment needs d >= 1 and k >= 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Mat::zeros(k, d);
    for i in 0..k {
        for j in 0..d {
            // open interval so no column can sum to zero
            m[(i, j)] = 1.0 - rng.random::<f64>();
        }
    }
    let sums = m.col_sums();
    let normalised = Mat::from_fn(k, d, |i, j| m[(i, j)] / sums[j])?;
    ExperimentMatrix::new(normalised)
}

/// Labels drawn uniformly from `1..=d`.
pub fn uniform_labels(n: usize, d: usize, seed: u64) -> Result<Labels> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Labels::new((0..n).map(|_| rng.random_range(1..=d)).collect(), d)
}

/// Categorical observations `y_n ~ P(·|x_n)`.
pub fn sample_observations(
    truth: &Labels,
    p: &ExperimentMatrix,
    seed: u64,
) -> Result<ObservationSet> {
    if truth.d() > p.d() {
        return Err(Error::Dimension(format!(
            "labels range over {} values, experiment has {} columns",
            truth.d(),
            p.d()
        )));
    }
    let pm = p.matrix();
    let k = p.k();
    let cumulative: Vec<Vec<f64>> = (0..p.d())
        .map(|j| {
            let mut acc = 0.0;
            pm.column(j)
                .into_iter()
                .map(|v| {
                    acc += v;
                    acc
                })
                .collect()
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids = truth
        .values()
        .iter()
        .map(|&x| sample_cumulative(&cumulative[x - 1], rng.random::<f64>()))
        .collect();
    ObservationSet::categorical(ids, k)
}

/// Index (1-based) of the first cumulative weight exceeding `u · total`.
fn sample_cumulative(cumulative: &[f64], u: f64) -> usize {
    let total = *cumulative.last().expect("non-empty distribution");
    let target = u * total;
    cumulative
        .iter()
        .position(|&c| target < c)
        .unwrap_or(cumulative.len() - 1)
        + 1
}

/// `y_n = means(x_n) + σ·ε_n` with standard normal `ε_n`.
pub fn gaussian_observations(
    truth: &Labels,
    means: &Mat,
    sigma: f64,
    seed: u64,
) -> Result<ObservationSet> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    if truth.d() > means.rows() {
        return Err(Error::Dimension(format!(
            "labels range over {} values, only {} class means given",
            truth.d(),
            means.rows()
        )));
    }
    let m = means.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(truth.len() * m);
    for &x in truth.values() {
        for &mu in means.row(x - 1) {
            let e: f64 = StandardNormal.sample(&mut rng);
            data.push(mu + sigma * e);
        }
    }
    ObservationSet::embedding(m, data)
}

/// `d×m` class means with i.i.d. normal directions, rescaled so the closest
/// pair sits exactly `min_distance` apart.
pub fn separated_means(d: usize, m: usize, min_distance: f64, seed: u64) -> Result<Mat> {
    if d == 0 || m == 0 || !(min_distance > 0.0) {
        return Err(Error::InvalidArgument(
            "class means need d, m >= 1 and a positive separation".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = Mat::from_fn(d, m, |_, _| StandardNormal.sample(&mut rng))?;
    let mut closest = f64::INFINITY;
    for a in 0..d {
        for b in (a + 1)..d {
            let dist: f64 = raw
                .row(a)
                .iter()
                .zip(raw.row(b))
                .map(|(u, v)| (u - v) * (u - v))
                .sum::<f64>()
                .sqrt();
            closest = closest.min(dist);
        }
    }
    if d == 1 || closest == 0.0 {
        return Ok(raw);
    }
    Ok(raw.scale(min_distance / closest))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MixedParams {
    pub alpha_off: f64,
    pub alpha_diag: f64,
    pub lambda_loc: f64,
    pub lambda_up: f64,
    pub gamma: f64,
    pub lambda_def: f64,
    /// 1-based default label.
    pub j0: usize,
}

impl Default for MixedParams {
    fn default() -> Self {
        Self {
            alpha_off: 0.2,
            alpha_diag: 6.0,
            lambda_loc: 1.0,
            lambda_up: 0.4,
            gamma: 0.5,
            lambda_def: 0.6,
            j0: 1,
        }
    }
}

impl MixedParams {
    /// Dirichlet concentration `α_i(j)` for 1-based labels.
    pub fn concentration(&self, i: usize, j: usize, d: usize) -> f64 {
        let gap = i.abs_diff(j);
        let ring = gap.min(d - gap) as f64;
        let up = (j as f64 - i as f64) * self.gamma;
        self.alpha_off
            + if j == i { self.alpha_diag } else { 0.0 }
            + self.lambda_loc * (-ring).exp()
            + self.lambda_up * up.exp()
            + if j == self.j0 { self.lambda_def } else { 0.0 }
    }

    /// Row-stochastic `d×d` policy matrix with Dirichlet rows.
    pub fn sample_policy(&self, d: usize, rng: &mut impl Rng) -> Result<Mat> {
        let mut pi = Mat::zeros(d, d);
        for i in 0..d {
            let mut total = 0.0;
            for j in 0..d {
                let alpha = self.concentration(i + 1, j + 1, d);
                let g = Gamma::new(alpha, 1.0).map_err(|e| {
                    Error::InvalidArgument(format!("invalid Dirichlet concentration {alpha}: {e}"))
                })?;
                // keep strictly positive even if a tiny draw underflows
                let v = g.sample(rng).max(f64::MIN_POSITIVE);
                pi[(i, j)] = v;
                total += v;
            }
            for j in 0..d {
                pi[(i, j)] /= total;
            }
        }
        Ok(pi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicySpec {
    Uniform,
    AsymNeighbor,
    RowSim2nd,
    Merge01,
    GroupUpDown,
    Mixed(MixedParams),
}

impl PolicySpec {
    pub const NAMES: [&'static str; 6] = [
        "uniform",
        "asym-neighbor",
        "row-sim-2nd",
        "merge-01",
        "group-updown",
        "mixed",
    ];

    pub fn all_default() -> Vec<PolicySpec> {
        Self::NAMES
            .iter()
            .map(|n| n.parse().expect("known name"))
            .collect()
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Uniform => "uniform",
            Self::AsymNeighbor => "asym-neighbor",
            Self::RowSim2nd => "row-sim-2nd",
            Self::Merge01 => "merge-01",
            Self::GroupUpDown => "group-updown",
            Self::Mixed(_) => "mixed",
        })
    }
}

impl FromStr for PolicySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "uniform" => Self::Uniform,
            "asym-neighbor" => Self::AsymNeighbor,
            "row-sim-2nd" => Self::RowSim2nd,
            "merge-01" => Self::Merge01,
            "group-updown" => Self::GroupUpDown,
            "mixed" => Self::Mixed(MixedParams::default()),
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown policy `{other}` (expected one of {})",
                    Self::NAMES.join(", ")
                )))
            }
        })
    }
}

impl Serialize for PolicySpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// For each label, the most cosine-similar other label under the given
/// per-label profiles (rows of `profiles`); ties go to the smallest label.
pub fn most_similar_labels(profiles: &Mat) -> Vec<usize> {
    let d = profiles.rows();
    let norms: Vec<f64> = (0..d)
        .map(|i| profiles.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    (0..d)
        .map(|i| {
            let mut best = i;
            let mut best_sim = f64::NEG_INFINITY;
            for j in (0..d).filter(|&j| j != i) {
                let dot: f64 = profiles
                    .row(i)
                    .iter()
                    .zip(profiles.row(j))
                    .map(|(a, b)| a * b)
                    .sum();
                let denom = norms[i] * norms[j];
                let sim = if denom > 0.0 { dot / denom } else { 0.0 };
                if sim > best_sim {
                    best_sim = sim;
                    best = j;
                }
            }
            best + 1
        })
        .collect()
}

/// Replaces each label independently with probability `p` by a draw from
/// `policy`. Row-sim-2nd uses the columns of `experiment`.
pub fn corrupt(
    truth: &Labels,
    p: f64,
    policy: &PolicySpec,
    experiment: Option<&ExperimentMatrix>,
    seed: u64,
) -> Result<Labels> {
    let neighbors = match (policy, experiment) {
        (PolicySpec::RowSim2nd, Some(e)) => Some(most_similar_labels(&e.matrix().transpose())),
        (PolicySpec::RowSim2nd, None) => {
            return Err(Error::InvalidArgument(
                "row-sim-2nd corruption needs the experiment matrix".into(),
            ))
        }
        _ => None,
    };
    corrupt_with_neighbors(truth, p, policy, neighbors.as_deref(), seed)
}

/// [`corrupt`] with precomputed row-sim-2nd targets (1-based, per label).
pub fn corrupt_with_neighbors(
    truth: &Labels,
    p: f64,
    policy: &PolicySpec,
    neighbors: Option<&[usize]>,
    seed: u64,
) -> Result<Labels> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "corruption level {p} is outside [0, 1]"
        )));
    }
    let d = truth.d();
    if matches!(policy, PolicySpec::Merge01) && d < 2 {
        return Err(Error::InvalidArgument(
            "merge-01 needs at least two labels".into(),
        ));
    }
    if matches!(policy, PolicySpec::RowSim2nd) && neighbors.is_none_or(|n| n.len() < d) {
        return Err(Error::InvalidArgument(
            "row-sim-2nd corruption needs a similarity target for every label".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pi = match policy {
        PolicySpec::Mixed(params) => Some(params.sample_policy(d, &mut rng)?),
        _ => None,
    };
    let cumulative_pi: Option<Vec<Vec<f64>>> = pi.as_ref().map(|pi| {
        (0..d)
            .map(|i| {
                let mut acc = 0.0;
                pi.row(i)
                    .iter()
                    .map(|v| {
                        acc += v;
                        acc
                    })
                    .collect()
            })
            .collect()
    });

    let values = truth
        .values()
        .iter()
        .map(|&x| {
            if rng.random::<f64>() >= p {
                return x;
            }
            match policy {
                PolicySpec::Uniform => rng.random_range(1..=d),
                PolicySpec::AsymNeighbor => {
                    if rng.random::<f64>() < ASYM_NEIGHBOR_PROB || d == 1 {
                        (x + 1).min(d)
                    } else {
                        let z = rng.random_range(1..d);
                        if z >= x {
                            z + 1
                        } else {
                            z
                        }
                    }
                }
                PolicySpec::RowSim2nd => neighbors.expect("checked above")[x - 1],
                PolicySpec::Merge01 => {
                    if x <= 2 {
                        1
                    } else {
                        x
                    }
                }
                PolicySpec::GroupUpDown => {
                    if rng.random::<bool>() {
                        (x + 1).min(d)
                    } else {
                        x.saturating_sub(1).max(1)
                    }
                }
                PolicySpec::Mixed(_) => {
                    let cum = &cumulative_pi.as_ref().expect("sampled above")[x - 1];
                    sample_cumulative(cum, rng.random::<f64>())
                }
            }
        })
        .collect();
    Labels::new(values, d)
}

/// How per-record observations are generated in a trial batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ObservationModel {
    /// `y ~ P(·|x)` with a random `k×d` experiment.
    Categorical,
    /// Width-`k` Gaussian embeddings around class means whose closest pair
    /// is `separation · sigma` apart.
    Gaussian { sigma: f64, separation: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialConfig {
    pub d: usize,
    pub k: usize,
    pub n: usize,
    pub p_levels: Vec<f64>,
    pub policy: PolicySpec,
    pub trials: usize,
    pub estimator: Estimator,
    #[serde(serialize_with = "serialize_display")]
    pub kernel: KernelRequest,
    pub observation: ObservationModel,
    pub master_seed: u64,
}

fn serialize_display<S: serde::Serializer, T: fmt::Display>(
    v: &T,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(v)
}

impl TrialConfig {
    /// Defaults for a categorical batch: delta kernel, plug-in estimator,
    /// `k = d`, corruption levels 0, 0.1, …, 0.5.
    pub fn categorical(
        d: usize,
        n: usize,
        policy: PolicySpec,
        trials: usize,
        master_seed: u64,
    ) -> Self {
        Self {
            d,
            k: d,
            n,
            p_levels: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
            policy,
            trials,
            estimator: Estimator::PlugIn,
            kernel: KernelRequest::Delta,
            observation: ObservationModel::Categorical,
            master_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: String| {
            Err(Error::Config {
                field: field.into(),
                message,
            })
        };
        if self.d == 0 {
            return bad("d", "must be >= 1".into());
        }
        if self.k == 0 {
            return bad("k", "must be >= 1".into());
        }
        if self.n == 0 {
            return bad("n", "must be >= 1".into());
        }
        if self.trials == 0 {
            return bad("trials", "must be >= 1".into());
        }
        if self.p_levels.is_empty() {
            return bad("p_levels", "must list at least one corruption level".into());
        }
        if let Some(p) = self.p_levels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return bad("p_levels", format!("level {p} is outside [0, 1]"));
        }
        if matches!(self.policy, PolicySpec::Merge01) && self.d < 2 {
            return bad("policy", "merge-01 needs d >= 2".into());
        }
        if matches!(self.estimator, Estimator::PartialKnowledge) {
            return bad(
                "estimator",
                "simulation scores with plugin or stratified".into(),
            );
        }
        match (self.observation, self.kernel) {
            (ObservationModel::Categorical, KernelRequest::Delta) => {}
            (ObservationModel::Categorical, k) => {
                return bad(
                    "kernel",
                    format!("categorical observations use the delta kernel, got {k}"),
                )
            }
            (ObservationModel::Gaussian { .. }, KernelRequest::Delta) => {
                return bad(
                    "kernel",
                    "Gaussian observations need linear, rbf or pseudo-posterior".into(),
                )
            }
            (ObservationModel::Gaussian { sigma, separation }, _) => {
                if !(sigma > 0.0) {
                    return bad("sigma", "must be positive".into());
                }
                if !(separation > 0.0) {
                    return bad("separation", "must be positive".into());
                }
            }
        }
        Ok(())
    }
}

/// The fixed ground truth shared by every trial of a batch.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub truth: Labels,
    pub obs: ObservationSet,
    pub kernel: KernelSpec,
    /// Row-sim-2nd targets (1-based, per label).
    pub neighbors: Vec<usize>,
    pub experiment: Option<ExperimentMatrix>,
}

pub fn ground_truth(cfg: &TrialConfig) -> Result<GroundTruth> {
    cfg.validate()?;
    let truth = uniform_labels(cfg.n, cfg.d, derive_seed(cfg.master_seed, STREAM_TRUTH))?;
    let obs_seed = derive_seed(cfg.master_seed, STREAM_OBSERVATIONS);
    let (obs, neighbors, experiment) = match cfg.observation {
        ObservationModel::Categorical => {
            let p = random_experiment(
                cfg.d,
                cfg.k,
                derive_seed(cfg.master_seed, STREAM_EXPERIMENT),
            )?;
            let obs = sample_observations(&truth, &p, obs_seed)?;
            let neighbors = most_similar_labels(&p.matrix().transpose());
            (obs, neighbors, Some(p))
        }
        ObservationModel::Gaussian { sigma, separation } => {
            let means = separated_means(
                cfg.d,
                cfg.k,
                separation * sigma,
                derive_seed(cfg.master_seed, STREAM_MEANS),
            )?;
            let obs = gaussian_observations(&truth, &means, sigma, obs_seed)?;
            (obs, most_similar_labels(&means), None)
        }
    };
    let kernel = cfg.kernel.resolve(&obs)?;
    Ok(GroundTruth {
        truth,
        obs,
        kernel,
        neighbors,
        experiment,
    })
}

/// Seed of trial `m` at corruption level index `pi`.
pub fn trial_seed(master: u64, pi: usize, m: usize) -> u64 {
    derive_path(master, &[STREAM_TRIALS, pi as u64, m as u64])
}

/// Runs `f` on the corrupted report of every (level, trial) pair in
/// parallel and returns results in (level, trial) order.
pub fn map_trials<T, F>(cfg: &TrialConfig, gt: &GroundTruth, f: F) -> Result<Vec<(usize, usize, T)>>
where
    T: Send,
    F: Fn(&Labels, u64) -> Result<T> + Sync,
{
    let jobs: Vec<(usize, usize)> = (0..cfg.p_levels.len())
        .flat_map(|pi| (0..cfg.trials).map(move |m| (pi, m)))
        .collect();
    jobs.into_par_iter()
        .map(|(pi, m)| {
            let seed = trial_seed(cfg.master_seed, pi, m);
            let report = corrupt_with_neighbors(
                &gt.truth,
                cfg.p_levels[pi],
                &cfg.policy,
                Some(&gt.neighbors),
                derive_seed(seed, 0),
            )?;
            Ok((pi, m, f(&report, derive_seed(seed, 1))?))
        })
        .collect()
}

/// Scores a report with the configured estimator.
pub fn score_report(
    cfg: &TrialConfig,
    gt: &GroundTruth,
    report: &Labels,
    seed: u64,
) -> Result<f64> {
    Ok(match cfg.estimator {
        Estimator::Stratified => stratified_score(report, &gt.obs, &gt.kernel, seed)?.value,
        _ => plugin_score(report, &gt.obs, &gt.kernel)?.value,
    })
}

/// `‖x − x̂‖₂` with label ids on the real line.
pub fn l2_error(truth: &Labels, report: &Labels) -> Result<f64> {
    if truth.len() != report.len() {
        return Err(Error::Shape("label sequences differ in length".into()));
    }
    Ok(truth
        .values()
        .iter()
        .zip(report.values())
        .map(|(&a, &b)| {
            let diff = a as f64 - b as f64;
            diff * diff
        })
        .sum::<f64>()
        .sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let (mean, stderr) = mean_and_stderr(values);
        Self {
            mean,
            stderr,
            count: values.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub p: f64,
    pub trial: usize,
    pub score: f64,
    pub hamming: usize,
    pub l2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialCell {
    pub policy: PolicySpec,
    pub p: f64,
    pub score: Stat,
    pub hamming: Stat,
    pub l2: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialResult {
    pub kernel: KernelSpec,
    pub cells: Vec<TrialCell>,
    pub records: Vec<TrialRecord>,
}

impl TrialResult {
    pub fn mean_scores(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.score.mean).collect()
    }
}

pub fn run_trials(cfg: &TrialConfig) -> Result<TrialResult> {
    let gt = ground_truth(cfg)?;
    run_trials_on(cfg, &gt)
}

/// [`run_trials`] on an existing ground truth.
pub fn run_trials_on(cfg: &TrialConfig, gt: &GroundTruth) -> Result<TrialResult> {
    let outcomes = map_trials(cfg, gt, |report, seed| {
        Ok((
            score_report(cfg, gt, report, seed)?,
            hamming_distance(&gt.truth, report)?,
            l2_error(&gt.truth, report)?,
        ))
    })?;
    let records: Vec<TrialRecord> = outcomes
        .into_iter()
        .map(|(pi, m, (score, hamming, l2))| TrialRecord {
            p: cfg.p_levels[pi],
            trial: m,
            score,
            hamming,
            l2,
        })
        .collect();
    let cells = records
        .chunks(cfg.trials)
        .map(|chunk| {
            let col = |f: fn(&TrialRecord) -> f64| chunk.iter().map(f).collect::<Vec<f64>>();
            TrialCell {
                policy: cfg.policy,
                p: chunk[0].p,
                score: Stat::of(&col(|r| r.score)),
                hamming: Stat::of(&col(|r| r.hamming as f64)),
                l2: Stat::of(&col(|r| r.l2)),
            }
        })
        .collect();
    Ok(TrialResult {
        kernel: gt.kernel,
        cells,
        records,
    })
}

/// True iff sorting `scores` in decreasing order gives the same sequence of
/// positions as sorting `reference` in increasing order. Ties in either list
/// make the answer false.
pub fn ranking_agreement(scores: &[f64], reference: &[f64]) -> Result<bool> {
    if scores.len() != reference.len() || scores.len() < 2 {
        return Err(Error::Shape(format!(
            "ranking needs two equal-length lists of at least 2 values, got {} and {}",
            scores.len(),
            reference.len()
        )));
    }
    let has_ties = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        s.windows(2).any(|w| w[0] == w[1])
    };
    if has_ties(scores) || has_ties(reference) {
        return Ok(false);
    }
    let mut by_score: Vec<usize> = (0..scores.len()).collect();
    by_score.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut by_ref: Vec<usize> = (0..reference.len()).collect();
    by_ref.sort_by(|&a, &b| reference[a].total_cmp(&reference[b]));
    Ok(by_score == by_ref)
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Shape(
            "spearman needs two equal-length lists of at least 2 values".into(),
        ));
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    Ok(pearson(&ra, &rb))
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && v[idx[end]] == v[idx[start]] {
            end += 1;
        }
        let avg = (start + end - 1) as f64 / 2.0 + 1.0;
        for &i in &idx[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}
