//! Kernels over observations and label Gram matrices.

use std::fmt;
use std::str::FromStr;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::matcore::Mat;
use crate::scoring::ExperimentMatrix;

/// Points used by the median heuristic.
pub const MEDIAN_SUBSAMPLE: usize = 256;

const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    Delta,
    Linear,
    Rbf { sigma: f64 },
    PseudoPosterior,
}

impl KernelSpec {
    pub fn rbf(sigma: f64) -> Result<Self> {
        if sigma > 0.0 && sigma.is_finite() {
            Ok(Self::Rbf { sigma })
        } else {
            Err(Error::InvalidArgument(format!(
                "rbf bandwidth must be positive, got {sigma}"
            )))
        }
    }

    pub fn needs_embedding(&self) -> bool {
        !matches!(self, Self::Delta)
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Delta => write!(f, "delta"),
            Self::Linear => write!(f, "linear"),
            Self::Rbf { sigma } => write!(f, "rbf:{sigma}"),
            Self::PseudoPosterior => write!(f, "pseudo-posterior"),
        }
    }
}

impl Serialize for KernelSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// A kernel as written on the command line; an rbf bandwidth may be left
/// open and filled in from the data by the median heuristic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelRequest {
    Delta,
    Linear,
    Rbf { sigma: Option<f64> },
    PseudoPosterior,
}

impl FromStr for KernelRequest {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "delta" => return Ok(Self::Delta),
            "linear" => return Ok(Self::Linear),
            "rbf" => return Ok(Self::Rbf { sigma: None }),
            "pseudo-posterior" => return Ok(Self::PseudoPosterior),
            _ => {}
        }
        if let Some(rest) = s.strip_prefix("rbf:") {
            let sigma: f64 = rest.parse().map_err(|_| {
                Error::InvalidArgument(format!("cannot parse rbf bandwidth `{rest}`"))
            })?;
            KernelSpec::rbf(sigma)?;
            return Ok(Self::Rbf { sigma: Some(sigma) });
        }
        Err(Error::InvalidArgument(format!(
            "unknown kernel `{s}` (expected delta | linear | rbf[:SIGMA] | pseudo-posterior)"
        )))
    }
}

impl fmt::Display for KernelRequest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Delta => write!(f, "delta"),
            Self::Linear => write!(f, "linear"),
            Self::Rbf { sigma: None } => write!(f, "rbf"),
            Self::Rbf { sigma: Some(s) } => write!(f, "rbf:{s}"),
            Self::PseudoPosterior => write!(f, "pseudo-posterior"),
        }
    }
}

impl KernelRequest {
    /// Fixes any open parameter using the observations.
    pub fn resolve(&self, obs: &ObservationSet) -> Result<KernelSpec> {
        Ok(match *self {
            Self::Delta => KernelSpec::Delta,
            Self::Linear => KernelSpec::Linear,
            Self::PseudoPosterior => KernelSpec::PseudoPosterior,
            Self::Rbf { sigma: Some(s) } => KernelSpec::rbf(s)?,
            Self::Rbf { sigma: None } => KernelSpec::rbf(median_heuristic(obs)?)?,
        })
    }
}

/// A single observation borrowed from an [`ObservationSet`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Observation<'a> {
    Categorical(usize),
    Embedding(&'a [f64]),
}

/// Per-record observations: categorical ids in `1..=k`, or real vectors of a
/// common width.
#[derive(Debug, Clone, PartialEq)]
pub enum ObservationSet {
    Categorical { ids: Vec<usize>, k: usize },
    Embedding { width: usize, data: Vec<f64> },
}

impl ObservationSet {
    pub fn categorical(ids: Vec<usize>, k: usize) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Shape("observation set is empty".into()));
        }
        if let Some((pos, v)) = ids.iter().enumerate().find(|(_, &v)| v == 0 || v > k) {
            return Err(Error::InvalidArgument(format!(
                "observation id {v} at position {pos} is outside 1..={k}"
            )));
        }
        Ok(Self::Categorical { ids, k })
    }

    pub fn embedding(width: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || data.is_empty() {
            return Err(Error::Shape(
                "embedding observations need width >= 1 and at least one record".into(),
            ));
        }
        if !data.len().is_multiple_of(width) {
            return Err(Error::Shape(format!(
                "{} values do not split into rows of width {width}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / width,
                col: pos % width,
            });
        }
        Ok(Self::Embedding { width, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * width);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != width {
                return Err(Error::Shape(format!(
                    "embedding row {i} has width {}, expected {width}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::embedding(width, data)
    }

    pub fn len(&self) -> usize {
        match self {
            Self::Categorical { ids, .. } => ids.len(),
            Self::Embedding { width, data } => data.len() / width,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, n: usize) -> Observation<'_> {
        match self {
            Self::Categorical { ids, .. } => Observation::Categorical(ids[n]),
            Self::Embedding { width, data } => {
                Observation::Embedding(&data[n * width..(n + 1) * width])
            }
        }
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            Self::Categorical { .. } => "categorical",
            Self::Embedding { .. } => "embedding",
        }
    }

    /// One-hot embedding of categorical observations.
    pub fn one_hot(&self) -> Result<Self> {
        match self {
            Self::Categorical { ids, k } => {
                let mut data = vec![0.0; ids.len() * k];
                for (n, &id) in ids.iter().enumerate() {
                    data[n * k + id - 1] = 1.0;
                }
                Self::embedding(*k, data)
            }
            Self::Embedding { .. } => Err(Error::KernelDomain(
                "one-hot encoding needs categorical observations".into(),
            )),
        }
    }

    /// Checks that `kernel` can be evaluated on these observations; `d` is
    /// the label-space size (pseudo-posteriors must have width `d`).
    pub fn check_kernel(&self, kernel: &KernelSpec, d: usize) -> Result<()> {
        match (kernel, self) {
            (KernelSpec::Delta, Self::Categorical { .. }) => Ok(()),
            (KernelSpec::Delta, Self::Embedding { .. }) => Err(Error::KernelDomain(
                "delta kernel needs categorical observations".into(),
            )),
            (_, Self::Categorical { .. }) => Err(Error::KernelDomain(format!(
                "{kernel} kernel needs embedding observations"
            ))),
            (KernelSpec::PseudoPosterior, Self::Embedding { width, data }) => {
                if *width != d {
                    return Err(Error::KernelDomain(format!(
                        "pseudo-posterior observations must have width {d}, got {width}"
                    )));
                }
                for (n, row) in data.chunks(*width).enumerate() {
                    let sum: f64 = row.iter().sum();
                    if row.iter().any(|&v| v < 0.0) || (sum - 1.0).abs() > SIMPLEX_TOL {
                        return Err(Error::KernelDomain(format!(
                            "observation {} is not a probability vector",
                            n + 1
                        )));
                    }
                }
                Ok(())
            }
            (_, Self::Embedding { .. }) => Ok(()),
        }
    }
}

pub fn kernel_eval(spec: &KernelSpec, y: Observation<'_>, y2: Observation<'_>) -> Result<f64> {
    match (spec, y, y2) {
        (KernelSpec::Delta, Observation::Categorical(a), Observation::Categorical(b)) => {
            Ok(if a == b { 1.0 } else { 0.0 })
        }
        (KernelSpec::Delta, _, _) => Err(Error::KernelDomain(
            "delta kernel needs categorical observations".into(),
        )),
        (_, Observation::Embedding(a), Observation::Embedding(b)) => {
            if a.len() != b.len() {
                return Err(Error::KernelDomain(format!(
                    "embedding widths differ: {} vs {}",
                    a.len(),
                    b.len()
                )));
            }
            Ok(match spec {
                KernelSpec::Linear | KernelSpec::PseudoPosterior => dot(a, b),
                KernelSpec::Rbf { sigma } => (-sq_dist(a, b) / (sigma * sigma)).exp(),
                KernelSpec::Delta => unreachable!(),
            })
        }
        _ => Err(Error::KernelDomain(format!(
            "{spec} kernel needs embedding observations"
        ))),
    }
}

/// Kernel matrix `K(y_a, y_b)` over a list of outcomes.
pub fn kernel_matrix(spec: &KernelSpec, outcomes: &ObservationSet) -> Result<Mat> {
    let k = outcomes.len();
    let mut m = Mat::zeros(k, k);
    for a in 0..k {
        for b in 0..=a {
            let v = kernel_eval(spec, outcomes.get(a), outcomes.get(b))?;
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
    }
    Ok(m)
}

/// Symmetric positive semidefinite `d×d` label Gram matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelGram {
    g: Mat,
}

impl LabelGram {
    pub fn new(g: Mat) -> Result<Self> {
        let scale = g.max_abs().max(1.0);
        if !g.is_symmetric(1e-12 * scale) {
            return Err(Error::InvalidArgument(
                "label Gram matrix is not symmetric".into(),
            ));
        }
        let ev = g.symmetric_eigenvalues()?;
        if let Some(&min) = ev.last() {
            if min < -1e-9 * scale {
                return Err(Error::InvalidArgument(format!(
                    "label Gram matrix is not positive semidefinite (eigenvalue {min:e})"
                )));
            }
        }
        Ok(Self { g })
    }

    pub fn matrix(&self) -> &Mat {
        &self.g
    }

    pub fn into_matrix(self) -> Mat {
        self.g
    }
}

/// `G_K = Pᵀ · kmat · P`. The delta kernel uses the identity as `kmat`;
/// other kernels need the outcome kernel matrix.
pub fn label_gram(
    p: &ExperimentMatrix,
    spec: &KernelSpec,
    kmat: Option<&Mat>,
) -> Result<LabelGram> {
    let pm = p.matrix();
    let g = match (spec, kmat) {
        (KernelSpec::Delta, None) => pm.t_matmul(pm)?,
        (_, Some(k)) => {
            if k.rows() != pm.rows() || k.cols() != pm.rows() {
                return Err(Error::Dimension(format!(
                    "kernel matrix is {}x{}, experiment has {} outcomes",
                    k.rows(),
                    k.cols(),
                    pm.rows()
                )));
            }
            pm.t_matmul(&k.matmul(pm)?)?
        }
        (_, None) => {
            return Err(Error::KernelDomain(format!(
                "{spec} kernel over a finite outcome space needs an outcome kernel matrix"
            )))
        }
    };
    LabelGram::new(symmetrize(g))
}

fn symmetrize(m: Mat) -> Mat {
    let t = m.transpose();
    m.add(&t).expect("square").scale(0.5)
}

/// Median pairwise Euclidean distance over a deterministic strided
/// subsample of at most [`MEDIAN_SUBSAMPLE`] points. Falls back to 1 when
/// every sampled point coincides.
pub fn median_heuristic(obs: &ObservationSet) -> Result<f64> {
    let n = obs.len();
    if !matches!(obs, ObservationSet::Embedding { .. }) {
        return Err(Error::KernelDomain(
            "median heuristic needs embedding observations".into(),
        ));
    }
    let m = n.min(MEDIAN_SUBSAMPLE);
    let idx: Vec<usize> = (0..m).map(|i| i * n / m).collect();
    let mut dists = Vec::with_capacity(m * (m - 1) / 2);
    for a in 0..m {
        for b in (a + 1)..m {
            if let (Observation::Embedding(u), Observation::Embedding(v)) =
                (obs.get(idx[a]), obs.get(idx[b]))
            {
                dists.push(sq_dist(u, v).sqrt());
            }
        }
    }
    if dists.is_empty() {
        return Ok(1.0);
    }
    dists.sort_by(f64::total_cmp);
    let mid = dists.len() / 2;
    let median = if dists.len() % 2 == 0 {
        0.5 * (dists[mid - 1] + dists[mid])
    } else {
        dists[mid]
    };
    Ok(if median > 0.0 { median } else { 1.0 })
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
