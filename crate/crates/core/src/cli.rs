//! Command-line front end. Every command is a thin wrapper over library
//! calls; settings resolve as flag, then config file, then environment
//! (seed only), then built-in default.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::baselines::{compare_scores, ComparisonResult};
use crate::dataset::{
    class_member, hamming_distance, misreport_matrix, ordering_holds, Labels, MatrixClass,
    OrderingSpec,
};
use crate::error::{Error, Result};
use crate::ingest::{
    bucket_boundaries, diff_series, env_seed, format_dataset, load_config, load_dataset,
    load_observations, load_series, quantile_bucketize, BucketizerSpec, Dataset, LabelMap,
    LoadedObservations, ObsKind, RunConfig,
};
use crate::kernels::{KernelRequest, ObservationSet};
use crate::results::{write_results, ManifestBuilder};
use crate::scoring::{plugin_score, stratified_repeated, BaselineRequest, Estimator, ScoreReport};
use crate::simulate::{run_trials, ObservationModel, PolicySpec, TrialConfig, TrialResult};

/// Exit status for input, parse and configuration errors.
pub const EXIT_INPUT: i32 = 2;
/// Exit status for kernel/observation domain mismatches.
pub const EXIT_DOMAIN: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "gramdet",
    version,
    about = "Score reported labels against indirect observations with the Gram determinant",
    after_help = "Labels are 1-based. The merge-01 policy merges labels {1,2} into 1."
)]
pub struct Cli {
    /// TOML file whose keys mirror the long flag names.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score one dataset.
    Score(ScoreArgs),
    /// Score several datasets identically and list them best first.
    Rank(RankArgs),
    /// Run seeded corruption trials on synthetic data.
    Simulate(SimulateArgs),
    /// Report misreport matrices, classes and orderings for files with a truth column.
    Validate(ValidateArgs),
    /// Turn a numeric series into quantile-bucket labels.
    Bucketize(BucketizeArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct ScoringFlags {
    /// delta | linear | rbf[:SIGMA] | pseudo-posterior (default delta)
    #[arg(long)]
    pub kernel: Option<String>,
    /// plugin | stratified (default plugin)
    #[arg(long)]
    pub estimator: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Stratified draws to average (default 1).
    #[arg(long)]
    pub repetitions: Option<usize>,
    /// auto | categorical | embedding (default auto)
    #[arg(long)]
    pub obs_kind: Option<String>,
    /// Observation file shared by the datasets, in record order.
    #[arg(long)]
    pub observations: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ScoreArgs {
    pub input: PathBuf,
    #[command(flatten)]
    pub flags: ScoringFlags,
    /// Results file (default gramdet-score.json).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RankArgs {
    #[arg(required = true, num_args = 2..)]
    pub inputs: Vec<PathBuf>,
    #[command(flatten)]
    pub flags: ScoringFlags,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub d: Option<usize>,
    /// Observation alphabet size or embedding width (default d).
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub p_levels: Option<Vec<f64>>,
    /// One or more of uniform, asym-neighbor, row-sim-2nd, merge-01, group-updown, mixed, or all.
    #[arg(long, value_delimiter = ',')]
    pub policy: Option<Vec<String>>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub estimator: Option<String>,
    #[arg(long)]
    pub kernel: Option<String>,
    /// categorical | gaussian
    #[arg(long)]
    pub observation_model: Option<String>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Closest class-mean distance in units of sigma.
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Baseline kinds to compare against the Gram score.
    #[arg(long, value_delimiter = ',')]
    pub compare: Option<Vec<String>>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Balance bound L.
    #[arg(long)]
    pub l: Option<f64>,
    /// Off-diagonal mass bound used with L.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Hamming ordering factor (default 1).
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BucketizeArgs {
    pub series: PathBuf,
    #[arg(long)]
    pub buckets: Option<usize>,
    /// Difference the series (and the paired series) first.
    #[arg(long)]
    pub diff: bool,
    #[arg(long)]
    pub column: Option<String>,
    /// Series bucketized into a categorical observation column.
    #[arg(long)]
    pub paired: Option<PathBuf>,
    #[arg(long)]
    pub paired_column: Option<String>,
    /// Dataset file to write (default stdout).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn parse_setting<T: std::str::FromStr<Err = Error>>(field: &str, value: &str) -> Result<T> {
    value.parse().map_err(|e: Error| Error::Config {
        field: field.into(),
        message: e.to_string(),
    })
}

fn resolve_seed(flag: Option<u64>, cfg: &RunConfig) -> Result<u64> {
    Ok(match flag.or(cfg.seed) {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    })
}

fn default_output(command: &str) -> PathBuf {
    PathBuf::from(format!("gramdet-{command}.json"))
}

/// Scoring settings after merging flags and the config file.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSettings {
    pub kernel: KernelRequest,
    pub estimator: Estimator,
    pub seed: u64,
    pub repetitions: usize,
    pub obs_kind: ObsKind,
    pub observations: Option<PathBuf>,
}

impl ScoreSettings {
    pub fn resolve(flags: &ScoringFlags, cfg: &RunConfig) -> Result<Self> {
        let kernel = match flags.kernel.as_ref().or(cfg.kernel.as_ref()) {
            Some(k) => parse_setting("kernel", k)?,
            None => KernelRequest::Delta,
        };
        let estimator = match flags.estimator.as_ref().or(cfg.estimator.as_ref()) {
            Some(e) => parse_setting("estimator", e)?,
            None => Estimator::PlugIn,
        };
        if estimator == Estimator::PartialKnowledge {
            return Err(Error::Config {
                field: "estimator".into(),
                message: "scoring a file needs plugin or stratified".into(),
            });
        }
        let repetitions = flags.repetitions.or(cfg.repetitions).unwrap_or(1);
        if repetitions == 0 {
            return Err(Error::Config {
                field: "repetitions".into(),
                message: "must be >= 1".into(),
            });
        }
        let obs_kind = match flags.obs_kind.as_ref().or(cfg.obs_kind.as_ref()) {
            Some(k) => parse_setting("obs-kind", k)?,
            None => ObsKind::Auto,
        };
        Ok(Self {
            kernel,
            estimator,
            seed: resolve_seed(flags.seed, cfg)?,
            repetitions,
            obs_kind,
            observations: flags
                .observations
                .clone()
                .or_else(|| cfg.observations.as_ref().map(PathBuf::from)),
        })
    }

    fn record(&self, m: &mut ManifestBuilder) {
        m.flag("kernel", self.kernel.to_string())
            .flag("estimator", self.estimator)
            .flag("repetitions", self.repetitions)
            .flag("obs-kind", format!("{:?}", self.obs_kind).to_lowercase())
            .flag(
                "observations",
                self.observations.as_ref().map(|p| p.display().to_string()),
            )
            .seed(self.seed);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreOutcome {
    pub input: String,
    pub labels: Vec<String>,
    pub report: ScoreReport,
    pub repetitions: usize,
    /// Standard error of the mean over stratified repetitions.
    pub stderr: Option<f64>,
}

/// Scores one report with the configured kernel and estimator.
pub fn score_labels(
    report: &Labels,
    obs: &ObservationSet,
    s: &ScoreSettings,
) -> Result<(ScoreReport, Option<f64>)> {
    let kernel = s.kernel.resolve(obs)?;
    obs.check_kernel(&kernel, report.d())?;
    match s.estimator {
        Estimator::PlugIn => Ok((plugin_score(report, obs, &kernel)?, None)),
        Estimator::Stratified => {
            let (r, se) = stratified_repeated(report, obs, &kernel, s.seed, s.repetitions)?;
            Ok((r, Some(se)))
        }
        Estimator::PartialKnowledge => Err(Error::InvalidArgument(
            "the partial-knowledge estimator needs a known experiment".into(),
        )),
    }
}

fn observations_for(
    input: &Path,
    ds: &Dataset,
    shared: Option<&LoadedObservations>,
) -> Result<ObservationSet> {
    match (shared, &ds.observations) {
        (Some(o), _) => Ok(o.obs.clone()),
        (None, Some(o)) => Ok(o.obs.clone()),
        (None, None) => Err(Error::Parse {
            path: input.display().to_string(),
            line: 1,
            message: "no observation columns and no --observations file".into(),
        }),
    }
}

fn summary_line(name: &str, r: &ScoreReport, stderr: Option<f64>) -> String {
    let mut s = format!(
        "{name}: score {:.6e} ({}, {}, N={}, d={})",
        r.value, r.estimator, r.kernel, r.n, r.d
    );
    if let Some(se) = stderr {
        s.push_str(&format!(" stderr {se:.3e}"));
    }
    if r.degenerate {
        s.push_str(&format!(
            "\n  degenerate: minimum label occurrence {} is too small for this estimator; score set to 0",
            r.min_occurrence
        ));
    }
    s
}

pub fn cmd_score(args: &ScoreArgs, cfg: &RunConfig) -> Result<(ScoreOutcome, String)> {
    let s = ScoreSettings::resolve(&args.flags, cfg)?;
    let mut m = ManifestBuilder::new("score");
    s.record(&mut m);
    m.input(&args.input)?;
    let shared = match &s.observations {
        Some(p) => {
            m.input(p)?;
            Some(load_observations(p, s.obs_kind)?)
        }
        None => None,
    };
    let mut labels = LabelMap::new();
    let ds = load_dataset(&args.input, s.obs_kind, &mut labels)?;
    let obs = observations_for(&args.input, &ds, shared.as_ref())?;
    let (report, stderr) = score_labels(&ds.report, &obs, &s)?;
    let outcome = ScoreOutcome {
        input: args.input.display().to_string(),
        labels: labels.names().to_vec(),
        report,
        repetitions: s.repetitions,
        stderr,
    };
    let output = args
        .output
        .clone()
        .or_else(|| cfg.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| default_output("score"));
    write_results(&output, m.finish(), &outcome)?;
    let summary = summary_line(&outcome.input, &outcome.report, stderr);
    Ok((outcome, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankEntry {
    pub rank: usize,
    pub input: String,
    pub score: f64,
    pub stderr: Option<f64>,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankOutcome {
    pub labels: Vec<String>,
    pub entries: Vec<RankEntry>,
}

/// Scores every input identically (one shared label map, same seed) and
/// sorts by score, best first; ties keep input order.
pub fn rank_datasets(inputs: &[PathBuf], s: &ScoreSettings) -> Result<RankOutcome> {
    if inputs.len() < 2 {
        return Err(Error::InvalidArgument(
            "ranking needs at least two datasets".into(),
        ));
    }
    let shared = match &s.observations {
        Some(p) => Some(load_observations(p, s.obs_kind)?),
        None => None,
    };
    let mut labels = LabelMap::new();
    let datasets: Vec<Dataset> = inputs
        .iter()
        .map(|p| load_dataset(p, s.obs_kind, &mut labels))
        .collect::<Result<_>>()?;
    let d = labels.len();
    let mut entries = Vec::with_capacity(inputs.len());
    for (path, ds) in inputs.iter().zip(&datasets) {
        let obs = observations_for(path, ds, shared.as_ref())?;
        let report = ds.report.with_alphabet(d)?;
        let (r, stderr) = score_labels(&report, &obs, s)?;
        entries.push(RankEntry {
            rank: 0,
            input: path.display().to_string(),
            score: r.value,
            stderr,
            degenerate: r.degenerate,
        });
    }
    entries.sort_by(|a, b| b.score.total_cmp(&a.score));
    for (i, e) in entries.iter_mut().enumerate() {
        e.rank = i + 1;
    }
    Ok(RankOutcome {
        labels: labels.names().to_vec(),
        entries,
    })
}

pub fn cmd_rank(args: &RankArgs, cfg: &RunConfig) -> Result<(RankOutcome, String)> {
    let s = ScoreSettings::resolve(&args.flags, cfg)?;
    let mut m = ManifestBuilder::new("rank");
    s.record(&mut m);
    for p in args.inputs.iter().chain(&s.observations) {
        m.input(p)?;
    }
    let outcome = rank_datasets(&args.inputs, &s)?;
    let output = args
        .output
        .clone()
        .or_else(|| cfg.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| default_output("rank"));
    write_results(&output, m.finish(), &outcome)?;
    let mut summary = format!("{:>4}  {:>14}  input\n", "rank", "score");
    for e in &outcome.entries {
        summary.push_str(&format!(
            "{:>4}  {:>14.6e}  {}{}\n",
            e.rank,
            e.score,
            e.input,
            if e.degenerate { "  (degenerate)" } else { "" }
        ));
    }
    Ok((outcome, summary.trim_end().to_owned()))
}

/// Trial settings after merging flags and the config file.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulateSettings {
    pub base: TrialConfig,
    pub policies: Vec<PolicySpec>,
    pub compare: Vec<BaselineRequest>,
    pub workers: Option<usize>,
}

fn parse_list<T: std::str::FromStr<Err = Error>>(field: &str, items: &[String]) -> Result<Vec<T>> {
    items
        .iter()
        .map(|s| parse_setting(field, s.trim()))
        .collect()
}

impl SimulateSettings {
    pub fn resolve(a: &SimulateArgs, cfg: &RunConfig) -> Result<Self> {
        let d = a.d.or(cfg.d).unwrap_or(5);
        let model_name = a
            .observation_model
            .clone()
            .or_else(|| cfg.observation_model.clone())
            .unwrap_or_else(|| "categorical".into());
        let observation = match model_name.as_str() {
            "categorical" => ObservationModel::Categorical,
            "gaussian" => ObservationModel::Gaussian {
                sigma: a.sigma.or(cfg.sigma).unwrap_or(1.0),
                separation: a.separation.or(cfg.separation).unwrap_or(4.0),
            },
            other => {
                return Err(Error::Config {
                    field: "observation-model".into(),
                    message: format!("unknown model `{other}` (expected categorical | gaussian)"),
                })
            }
        };
        let kernel = match a.kernel.as_ref().or(cfg.kernel.as_ref()) {
            Some(k) => parse_setting("kernel", k)?,
            None if observation == ObservationModel::Categorical => KernelRequest::Delta,
            None => KernelRequest::Rbf { sigma: None },
        };
        let estimator = match a.estimator.as_ref().or(cfg.estimator.as_ref()) {
            Some(e) => parse_setting("estimator", e)?,
            None => Estimator::PlugIn,
        };
        let policy_names = a
            .policy
            .clone()
            .or_else(|| cfg.policy.clone())
            .unwrap_or_else(|| vec!["uniform".into()]);
        let policies = if policy_names.iter().any(|p| p == "all") {
            PolicySpec::all_default()
        } else {
            parse_list("policy", &policy_names)?
        };
        if policies.is_empty() {
            return Err(Error::Config {
                field: "policy".into(),
                message: "at least one policy is required".into(),
            });
        }
        let compare = parse_list(
            "compare",
            a.compare
                .as_ref()
                .or(cfg.compare.as_ref())
                .map_or(&[][..], |v| v),
        )?;
        let workers = a.workers.or(cfg.workers);
        if workers == Some(0) {
            return Err(Error::Config {
                field: "workers".into(),
                message: "must be >= 1".into(),
            });
        }
        let base = TrialConfig {
            d,
            k: a.k.or(cfg.k).unwrap_or(d),
            n: a.n.or(cfg.n).unwrap_or(2000),
            p_levels: a
                .p_levels
                .clone()
                .or_else(|| cfg.p_levels.clone())
                .unwrap_or_else(|| vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5]),
            policy: policies[0],
            trials: a.trials.or(cfg.trials).unwrap_or(20),
            estimator,
            kernel,
            observation,
            master_seed: resolve_seed(a.seed, cfg)?,
        };
        for &policy in &policies {
            TrialConfig {
                policy,
                ..base.clone()
            }
            .validate()?;
        }
        Ok(Self {
            base,
            policies,
            compare,
            workers,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum SimulateOutcome {
    Trials { runs: Vec<TrialResult> },
    Comparison { comparison: ComparisonResult },
}

/// Runs the trial batches (or the baseline comparison) for the settings.
pub fn simulate(s: &SimulateSettings) -> Result<SimulateOutcome> {
    let work = || -> Result<SimulateOutcome> {
        if s.compare.is_empty() {
            let runs = s
                .policies
                .iter()
                .map(|&policy| {
                    run_trials(&TrialConfig {
                        policy,
                        ..s.base.clone()
                    })
                })
                .collect::<Result<_>>()?;
            Ok(SimulateOutcome::Trials { runs })
        } else {
            Ok(SimulateOutcome::Comparison {
                comparison: compare_scores(&s.base, &s.policies, &s.compare)?,
            })
        }
    };
    match s.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot start {w} workers: {e}")))?
            .install(work),
        None => work(),
    }
}

pub fn cmd_simulate(args: &SimulateArgs, cfg: &RunConfig) -> Result<(SimulateOutcome, String)> {
    let s = SimulateSettings::resolve(args, cfg)?;
    let mut m = ManifestBuilder::new("simulate");
    let b = &s.base;
    m.flag("d", b.d)
        .flag("k", b.k)
        .flag("n", b.n)
        .flag("p-levels", &b.p_levels)
        .flag(
            "policy",
            s.policies.iter().map(|p| p.to_string()).collect::<Vec<_>>(),
        )
        .flag("trials", b.trials)
        .flag("estimator", b.estimator)
        .flag("kernel", b.kernel.to_string())
        .flag("observation-model", b.observation)
        .flag(
            "compare",
            s.compare
                .iter()
                .map(|c| c.resolve(b.d).to_string())
                .collect::<Vec<_>>(),
        )
        .seed(b.master_seed);
    let outcome = simulate(&s)?;
    let output = args
        .output
        .clone()
        .or_else(|| cfg.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| default_output("simulate"));
    write_results(&output, m.finish(), &outcome)?;

    let mut summary = String::new();
    match &outcome {
        SimulateOutcome::Trials { runs } => {
            for run in runs {
                for c in &run.cells {
                    summary.push_str(&format!(
                        "{:<14} p={:<5} score {:.6e} ± {:.2e}  hamming {:.1}\n",
                        c.policy.to_string(),
                        c.p,
                        c.score.mean,
                        c.score.stderr,
                        c.hamming.mean
                    ));
                }
            }
        }
        SimulateOutcome::Comparison { comparison } => {
            for c in &comparison.cells {
                summary.push_str(&format!(
                    "{:<14} {:<16} p={:<5} {:.6e} ± {:.2e}\n",
                    c.policy.to_string(),
                    c.kind,
                    c.p,
                    c.stat.mean,
                    c.stat.stderr
                ));
            }
            for r in &comparison.rank_consistency {
                summary.push_str(&format!(
                    "{:<14} {} vs {}: {}\n",
                    r.policy.to_string(),
                    r.a,
                    r.b,
                    if r.consistent {
                        "same order"
                    } else {
                        "orders differ"
                    }
                ));
            }
        }
    }
    Ok((outcome, summary.trim_end().to_owned()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassFlags {
    pub nonperm: bool,
    pub reg: bool,
    pub dom: bool,
    pub balanced: Option<bool>,
    pub balanced_delta: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidateEntry {
    pub input: String,
    /// Counts indexed `[true label][reported label]`.
    pub counts: Vec<Vec<u64>>,
    pub joint: Vec<Vec<f64>>,
    pub trace: f64,
    pub hamming: usize,
    pub classes: ClassFlags,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderingEntry {
    pub better: String,
    pub worse: String,
    pub exact: bool,
    pub blackwell: bool,
    pub blackwell_witness: Option<Vec<Vec<f64>>>,
    pub hamming: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidateOutcome {
    pub labels: Vec<String>,
    pub alpha: f64,
    pub entries: Vec<ValidateEntry>,
    /// Pairwise verdicts; absent when the files disagree on the truth.
    pub orderings: Option<Vec<OrderingEntry>>,
}

pub fn validate_files(
    inputs: &[PathBuf],
    l: Option<f64>,
    delta: Option<f64>,
    alpha: f64,
) -> Result<ValidateOutcome> {
    let hamming_spec = OrderingSpec::hamming(alpha)?;
    let balanced = l.map(MatrixClass::balanced).transpose()?;
    let balanced_delta = match (l, delta) {
        (Some(l), Some(dl)) => Some(MatrixClass::balanced_delta(l, dl)?),
        (None, Some(_)) => {
            return Err(Error::Config {
                field: "delta".into(),
                message: "needs --l as well".into(),
            })
        }
        _ => None,
    };
    let mut labels = LabelMap::new();
    let mut loaded = Vec::new();
    for p in inputs {
        let ds = load_dataset(p, ObsKind::Auto, &mut labels)?;
        let truth = ds.truth.ok_or_else(|| Error::Parse {
            path: p.display().to_string(),
            line: 1,
            message: "missing `truth` column".into(),
        })?;
        loaded.push((p.display().to_string(), truth, ds.report));
    }
    let d = labels.len();
    let loaded: Vec<(String, Labels, Labels)> = loaded
        .into_iter()
        .map(|(p, t, r)| Ok((p, t.with_alphabet(d)?, r.with_alphabet(d)?)))
        .collect::<Result<_>>()?;

    let mut entries = Vec::new();
    for (input, truth, report) in &loaded {
        let counts = misreport_matrix(truth, report)?;
        entries.push(ValidateEntry {
            input: input.clone(),
            counts: counts.to_rows(),
            joint: counts.q().to_rows(),
            trace: counts.trace(),
            hamming: hamming_distance(truth, report)?,
            classes: ClassFlags {
                nonperm: class_member(&counts, MatrixClass::NonPerm),
                reg: class_member(&counts, MatrixClass::Reg),
                dom: class_member(&counts, MatrixClass::Dom),
                balanced: balanced.map(|c| class_member(&counts, c)),
                balanced_delta: balanced_delta.map(|c| class_member(&counts, c)),
            },
        });
    }

    let same_truth = loaded.windows(2).all(|w| w[0].1 == w[1].1);
    let orderings = if same_truth {
        let mut out = Vec::new();
        for (a, (na, truth, ra)) in loaded.iter().enumerate() {
            for (b, (nb, _, rb)) in loaded.iter().enumerate() {
                if a == b {
                    continue;
                }
                let bw = ordering_holds(truth, ra, rb, &OrderingSpec::Blackwell)?;
                out.push(OrderingEntry {
                    better: na.clone(),
                    worse: nb.clone(),
                    exact: ordering_holds(truth, ra, rb, &OrderingSpec::Exact)?.holds,
                    blackwell: bw.holds,
                    blackwell_witness: bw.witness.filter(|w| w.is_witness).map(|w| w.t.to_rows()),
                    hamming: ordering_holds(truth, ra, rb, &hamming_spec)?.holds,
                });
            }
        }
        Some(out)
    } else {
        None
    };
    Ok(ValidateOutcome {
        labels: labels.names().to_vec(),
        alpha,
        entries,
        orderings,
    })
}

pub fn cmd_validate(args: &ValidateArgs, cfg: &RunConfig) -> Result<(ValidateOutcome, String)> {
    let l = args.l.or(cfg.l);
    let delta = args.delta.or(cfg.delta);
    let alpha = args.alpha.or(cfg.alpha).unwrap_or(1.0);
    let mut m = ManifestBuilder::new("validate");
    m.flag("l", l).flag("delta", delta).flag("alpha", alpha);
    for p in &args.inputs {
        m.input(p)?;
    }
    let outcome = validate_files(&args.inputs, l, delta, alpha)?;
    let output = args
        .output
        .clone()
        .or_else(|| cfg.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| default_output("validate"));
    write_results(&output, m.finish(), &outcome)?;

    let yes = |b: bool| if b { "yes" } else { "no" };
    let mut summary = String::new();
    for e in &outcome.entries {
        summary.push_str(&format!(
            "{}: trace {:.6} hamming {} nonperm {} reg {} dom {}",
            e.input,
            e.trace,
            e.hamming,
            yes(e.classes.nonperm),
            yes(e.classes.reg),
            yes(e.classes.dom)
        ));
        if let Some(b) = e.classes.balanced {
            summary.push_str(&format!(" L-balanced {}", yes(b)));
        }
        if let Some(b) = e.classes.balanced_delta {
            summary.push_str(&format!(" L-delta {}", yes(b)));
        }
        summary.push('\n');
        for row in &e.counts {
            let cells: Vec<String> = row.iter().map(|c| format!("{c:>6}")).collect();
            summary.push_str(&format!("  {}\n", cells.join("")));
        }
    }
    match &outcome.orderings {
        Some(list) => {
            for o in list {
                summary.push_str(&format!(
                    "{} over {}: exact {} blackwell {} hamming {}\n",
                    o.better,
                    o.worse,
                    yes(o.exact),
                    yes(o.blackwell),
                    yes(o.hamming)
                ));
            }
        }
        None => summary.push_str("orderings skipped: the files disagree on the truth column\n"),
    }
    Ok((outcome, summary.trim_end().to_owned()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketizeOutcome {
    pub labels: Vec<usize>,
    pub boundaries: Vec<f64>,
    pub paired_labels: Option<Vec<usize>>,
    pub paired_boundaries: Option<Vec<f64>>,
    /// The emitted dataset text.
    #[serde(skip)]
    pub dataset: String,
}

fn prepared_series(path: &Path, column: Option<&str>, diff: bool) -> Result<Vec<f64>> {
    let s = load_series(path, column)?;
    if diff {
        diff_series(&s)
    } else {
        Ok(s)
    }
}

/// Bucketizes a series (and optionally a paired series with its own
/// boundaries) into a dataset with a `report` column and an `obs` column.
pub fn bucketize_files(
    series: &Path,
    column: Option<&str>,
    paired: Option<(&Path, Option<&str>)>,
    spec: BucketizerSpec,
    diff: bool,
) -> Result<BucketizeOutcome> {
    let values = prepared_series(series, column, diff)?;
    let labels = quantile_bucketize(&values, spec)?;
    let boundaries = bucket_boundaries(&values, spec)?;
    let b = spec.buckets();
    let mut names = LabelMap::new();
    for i in 1..=b {
        names.id(&i.to_string());
    }
    let (paired_labels, paired_boundaries, obs) = match paired {
        Some((path, col)) => {
            let pv = prepared_series(path, col, diff)?;
            if pv.len() != values.len() {
                return Err(Error::Shape(format!(
                    "series has {} values but the paired series has {}",
                    values.len(),
                    pv.len()
                )));
            }
            let pl = quantile_bucketize(&pv, spec)?;
            let obs = LoadedObservations {
                obs: ObservationSet::categorical(pl.values().to_vec(), b)?,
                outcome_names: names.names().to_vec(),
                columns: vec!["obs".into()],
            };
            (
                Some(pl.values().to_vec()),
                Some(bucket_boundaries(&pv, spec)?),
                Some(obs),
            )
        }
        None => (None, None, None),
    };
    let dataset = format_dataset(&labels, None, obs.as_ref(), &names);
    Ok(BucketizeOutcome {
        labels: labels.values().to_vec(),
        boundaries,
        paired_labels,
        paired_boundaries,
        dataset,
    })
}

pub fn cmd_bucketize(args: &BucketizeArgs, cfg: &RunConfig) -> Result<(BucketizeOutcome, String)> {
    let spec = match args.buckets.or(cfg.buckets) {
        Some(b) => BucketizerSpec::new(b)?,
        None => BucketizerSpec::default(),
    };
    let diff = args.diff || cfg.diff.unwrap_or(false);
    let column = args.column.clone().or_else(|| cfg.column.clone());
    let paired = args
        .paired
        .clone()
        .or_else(|| cfg.paired.as_ref().map(PathBuf::from));
    let paired_column = args
        .paired_column
        .clone()
        .or_else(|| cfg.paired_column.clone());
    let outcome = bucketize_files(
        &args.series,
        column.as_deref(),
        paired.as_deref().map(|p| (p, paired_column.as_deref())),
        spec,
        diff,
    )?;
    let output = args
        .output
        .clone()
        .or_else(|| cfg.output.as_ref().map(PathBuf::from));
    match &output {
        Some(p) => {
            std::fs::write(p, &outcome.dataset)?;
            let summary = format!(
                "{} labels in {} buckets written to {}",
                outcome.labels.len(),
                spec.buckets(),
                p.display()
            );
            Ok((outcome, summary))
        }
        None => {
            let text = outcome.dataset.trim_end().to_owned();
            Ok((outcome, text))
        }
    }
}

/// Runs a parsed command line and returns the human summary.
pub fn run(cli: &Cli) -> Result<String> {
    let cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    Ok(match &cli.command {
        Command::Score(a) => cmd_score(a, &cfg)?.1,
        Command::Rank(a) => cmd_rank(a, &cfg)?.1,
        Command::Simulate(a) => cmd_simulate(a, &cfg)?.1,
        Command::Validate(a) => cmd_validate(a, &cfg)?.1,
        Command::Bucketize(a) => cmd_bucketize(a, &cfg)?.1,
    })
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::KernelDomain(_) => EXIT_DOMAIN,
        _ => EXIT_INPUT,
    }
}

/// Parses `args` (program name first), runs the command, prints the
/// summary or the error, and returns the process exit status.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { 0 };
        }
    };
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
