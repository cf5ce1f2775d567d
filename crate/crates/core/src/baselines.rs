//! Paired comparison of the Gram determinant score against the whitened-joint
//! baseline scores over a shared stream of corrupted reports.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::ObservationSet;
use crate::scoring::{baseline_score, BaselineKind, BaselineRequest, JointDistribution};
use crate::simulate::{
    ground_truth, map_trials, ranking_agreement, score_report, PolicySpec, Stat, TrialConfig,
};

/// Name under which the Gram determinant score appears in comparisons.
pub const GRAM_KIND: &str = "gram";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonCell {
    pub kind: String,
    pub policy: PolicySpec,
    pub p: f64,
    pub stat: Stat,
}

/// Whether two score kinds order a policy's corruption levels identically
/// by their mean scores.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankConsistency {
    pub policy: PolicySpec,
    pub a: String,
    pub b: String,
    pub consistent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonResult {
    pub kinds: Vec<String>,
    pub cells: Vec<ComparisonCell>,
    pub rank_consistency: Vec<RankConsistency>,
}

impl ComparisonResult {
    /// Mean scores of one kind under one policy, in corruption-level order.
    pub fn means(&self, kind: &str, policy: &PolicySpec) -> Vec<f64> {
        self.cells
            .iter()
            .filter(|c| c.kind == kind && c.policy.to_string() == policy.to_string())
            .map(|c| c.stat.mean)
            .collect()
    }

    pub fn cell(&self, kind: &str, policy: &PolicySpec, p: f64) -> Option<&ComparisonCell> {
        self.cells
            .iter()
            .find(|c| c.kind == kind && c.policy.to_string() == policy.to_string() && c.p == p)
    }
}

/// Scores every trial of `cfg` under each policy with the Gram determinant
/// (configured estimator) and every requested baseline on the empirical
/// (observation, report) joint. Trials use the same derived seeds as
/// [`crate::simulate::run_trials`].
pub fn compare_scores(
    cfg: &TrialConfig,
    policies: &[PolicySpec],
    kinds: &[BaselineRequest],
) -> Result<ComparisonResult> {
    if policies.is_empty() {
        return Err(Error::InvalidArgument(
            "comparison needs at least one policy".into(),
        ));
    }
    let resolved: Vec<BaselineKind> = kinds.iter().map(|k| k.resolve(cfg.d)).collect();
    let mut names = vec![GRAM_KIND.to_owned()];
    for k in &resolved {
        let name = k.to_string();
        if !names.contains(&name) {
            names.push(name);
        }
    }

    let mut cells = Vec::new();
    let mut rank_consistency = Vec::new();
    for policy in policies {
        let mut run_cfg = cfg.clone();
        run_cfg.policy = *policy;
        let gt = ground_truth(&run_cfg)?;
        if !matches!(gt.obs, ObservationSet::Categorical { .. }) {
            return Err(Error::KernelDomain(
                "baseline scores need categorical observations".into(),
            ));
        }
        let outcomes = map_trials(&run_cfg, &gt, |report, seed| {
            let mut row = vec![score_report(&run_cfg, &gt, report, seed)?];
            let joint = JointDistribution::empirical(report, &gt.obs)?;
            for name in &names[1..] {
                let kind = resolved
                    .iter()
                    .find(|k| &k.to_string() == name)
                    .expect("name comes from resolved kinds");
                row.push(baseline_score(&joint, *kind)?);
            }
            Ok(row)
        })?;

        let mut means_by_kind = vec![Vec::new(); names.len()];
        for (pi, &p) in run_cfg.p_levels.iter().enumerate() {
            let in_cell: Vec<&Vec<f64>> = outcomes
                .iter()
                .filter(|(i, _, _)| *i == pi)
                .map(|(_, _, r)| r)
                .collect();
            for (ki, name) in names.iter().enumerate() {
                let values: Vec<f64> = in_cell.iter().map(|r| r[ki]).collect();
                let stat = Stat::of(&values);
                means_by_kind[ki].push(stat.mean);
                cells.push(ComparisonCell {
                    kind: name.clone(),
                    policy: *policy,
                    p,
                    stat,
                });
            }
        }
        for a in 0..names.len() {
            for b in (a + 1)..names.len() {
                let consistent = if means_by_kind[a].len() < 2 {
                    true
                } else {
                    let reversed: Vec<f64> = means_by_kind[b].iter().map(|v| -v).collect();
                    ranking_agreement(&means_by_kind[a], &reversed)?
                };
                rank_consistency.push(RankConsistency {
                    policy: *policy,
                    a: names[a].clone(),
                    b: names[b].clone(),
                    consistent,
                });
            }
        }
    }
    Ok(ComparisonResult {
        kinds: names,
        cells,
        rank_consistency,
    })
}
