//! Delimited-text datasets, series bucketization and run configuration.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Deserialize;

use crate::dataset::Labels;
use crate::error::{Error, Result};
use crate::kernels::ObservationSet;

pub const REPORT_COLUMN: &str = "report";
pub const TRUTH_COLUMN: &str = "truth";

/// Environment variable consulted for the default seed.
pub const SEED_ENV: &str = "GRAMDET_SEED";

/// Maps label strings to 1-based ids in order of first appearance.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelMap {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn id(&mut self, name: &str) -> usize {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        self.names.push(name.to_owned());
        let id = self.names.len();
        self.index.insert(name.to_owned(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id - 1]
    }
}

/// How observation columns are read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ObsKind {
    /// One observation column is categorical, several form an embedding.
    #[default]
    Auto,
    Categorical,
    Embedding,
}

impl std::str::FromStr for ObsKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Self::Auto),
            "categorical" => Ok(Self::Categorical),
            "embedding" => Ok(Self::Embedding),
            other => Err(Error::InvalidArgument(format!(
                "unknown observation kind `{other}` (expected auto | categorical | embedding)"
            ))),
        }
    }
}

/// A parsed delimited file: header plus rows with their 1-based line numbers.
#[derive(Debug, Clone)]
pub struct Table {
    pub path: String,
    pub headers: Vec<String>,
    pub rows: Vec<(usize, Vec<String>)>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }
}

fn parse_err(path: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_owned(),
        line,
        message: message.into(),
    }
}

/// Reads a header-led comma- or tab-separated file. The delimiter is tab
/// when the header line contains a tab, comma otherwise.
pub fn read_table(path: &Path) -> Result<Table> {
    let shown = path.display().to_string();
    let text = fs::read_to_string(path)?;
    let first = text.lines().next().unwrap_or("");
    if first.trim().is_empty() {
        return Err(parse_err(&shown, 1, "file is empty or has no header"));
    }
    let delimiter = if first.contains('\t') { b'\t' } else { b',' };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(&shown, 1, e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(&shown, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        if record.len() != headers.len() {
            return Err(parse_err(
                &shown,
                line,
                format!("expected {} fields, found {}", headers.len(), record.len()),
            ));
        }
        rows.push((line, record.iter().map(str::to_owned).collect()));
    }
    if rows.is_empty() {
        return Err(parse_err(&shown, 2, "file has a header but no records"));
    }
    Ok(Table {
        path: shown,
        headers,
        rows,
    })
}

/// Observations read from a file, with categorical names when applicable.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedObservations {
    pub obs: ObservationSet,
    /// Names of categorical outcomes in id order; empty for embeddings.
    pub outcome_names: Vec<String>,
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub report: Labels,
    pub truth: Option<Labels>,
    pub observations: Option<LoadedObservations>,
}

/// Loads a dataset with a `report` column, an optional `truth` column and
/// any number of observation columns. Label strings are mapped through
/// `labels` (truth before report on each row); the returned sequences use
/// the map's size at the end of the load as their alphabet.
pub fn load_dataset(path: &Path, kind: ObsKind, labels: &mut LabelMap) -> Result<Dataset> {
    let table = read_table(path)?;
    let report_col = table
        .column(REPORT_COLUMN)
        .ok_or_else(|| parse_err(&table.path, 1, format!("missing `{REPORT_COLUMN}` column")))?;
    let truth_col = table.column(TRUTH_COLUMN);
    let obs_cols: Vec<usize> = (0..table.headers.len())
        .filter(|&c| c != report_col && Some(c) != truth_col)
        .collect();

    let mut report = Vec::with_capacity(table.rows.len());
    let mut truth = Vec::new();
    for (_, row) in &table.rows {
        if let Some(t) = truth_col {
            truth.push(labels.id(&row[t]));
        }
        report.push(labels.id(&row[report_col]));
    }
    let d = labels.len();
    let observations = if obs_cols.is_empty() {
        None
    } else {
        Some(parse_observations(&table, &obs_cols, kind)?)
    };
    Ok(Dataset {
        report: Labels::new(report, d)?,
        truth: if truth_col.is_some() {
            Some(Labels::new(truth, d)?)
        } else {
            None
        },
        observations,
    })
}

/// Loads an observation-only file (every column is an observation column).
pub fn load_observations(path: &Path, kind: ObsKind) -> Result<LoadedObservations> {
    let table = read_table(path)?;
    let cols: Vec<usize> = (0..table.headers.len()).collect();
    parse_observations(&table, &cols, kind)
}

fn parse_observations(table: &Table, cols: &[usize], kind: ObsKind) -> Result<LoadedObservations> {
    let categorical = match kind {
        ObsKind::Auto => cols.len() == 1,
        ObsKind::Categorical => {
            if cols.len() != 1 {
                return Err(parse_err(
                    &table.path,
                    1,
                    format!(
                        "categorical observations need one column, found {}",
                        cols.len()
                    ),
                ));
            }
            true
        }
        ObsKind::Embedding => false,
    };
    let columns = cols.iter().map(|&c| table.headers[c].clone()).collect();
    if categorical {
        let mut outcomes = LabelMap::new();
        let ids: Vec<usize> = table
            .rows
            .iter()
            .map(|(_, r)| outcomes.id(&r[cols[0]]))
            .collect();
        let k = outcomes.len();
        return Ok(LoadedObservations {
            obs: ObservationSet::categorical(ids, k)?,
            outcome_names: outcomes.names().to_vec(),
            columns,
        });
    }
    let width = cols.len();
    let mut data = Vec::with_capacity(table.rows.len() * width);
    for (line, row) in &table.rows {
        for &c in cols {
            let v: f64 = row[c].parse().map_err(|_| {
                parse_err(
                    &table.path,
                    *line,
                    format!(
                        "column `{}`: `{}` is not a number",
                        table.headers[c], row[c]
                    ),
                )
            })?;
            if !v.is_finite() {
                return Err(parse_err(
                    &table.path,
                    *line,
                    "non-finite observation value",
                ));
            }
            data.push(v);
        }
    }
    Ok(LoadedObservations {
        obs: ObservationSet::embedding(width, data)?,
        outcome_names: Vec::new(),
        columns,
    })
}

/// Writes a dataset in the format [`load_dataset`] reads. Labels are written
/// by name through `labels`; categorical outcomes by `outcome_names`.
pub fn write_dataset(
    path: &Path,
    report: &Labels,
    truth: Option<&Labels>,
    observations: Option<&LoadedObservations>,
    labels: &LabelMap,
) -> Result<()> {
    let out = format_dataset(report, truth, observations, labels);
    let mut file = fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

/// The text [`write_dataset`] writes.
pub fn format_dataset(
    report: &Labels,
    truth: Option<&Labels>,
    observations: Option<&LoadedObservations>,
    labels: &LabelMap,
) -> String {
    let mut out = String::new();
    let mut header = vec![REPORT_COLUMN.to_owned()];
    if truth.is_some() {
        header.push(TRUTH_COLUMN.to_owned());
    }
    if let Some(o) = observations {
        header.extend(o.columns.iter().cloned());
    }
    out.push_str(&header.join(","));
    out.push('\n');
    for n in 0..report.len() {
        let mut fields = vec![labels.name(report.values()[n]).to_owned()];
        if let Some(t) = truth {
            fields.push(labels.name(t.values()[n]).to_owned());
        }
        if let Some(o) = observations {
            match &o.obs {
                ObservationSet::Categorical { ids, .. } => {
                    fields.push(o.outcome_names[ids[n] - 1].clone())
                }
                ObservationSet::Embedding { width, data } => fields.extend(
                    data[n * width..(n + 1) * width]
                        .iter()
                        .map(|v| format!("{v:?}")),
                ),
            }
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Reads one numeric column (by name, or the only/first column).
pub fn load_series(path: &Path, column: Option<&str>) -> Result<Vec<f64>> {
    let table = read_table(path)?;
    let col = match column {
        Some(name) => table
            .column(name)
            .ok_or_else(|| parse_err(&table.path, 1, format!("missing `{name}` column")))?,
        None if table.headers.len() == 1 => 0,
        None => {
            return Err(parse_err(
                &table.path,
                1,
                format!(
                    "{} columns found; choose one with --column",
                    table.headers.len()
                ),
            ))
        }
    };
    table
        .rows
        .iter()
        .map(|(line, row)| {
            row[col]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    parse_err(
                        &table.path,
                        *line,
                        format!("`{}` is not a number", row[col]),
                    )
                })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BucketizerSpec {
    buckets: usize,
}

impl BucketizerSpec {
    pub fn new(buckets: usize) -> Result<Self> {
        if buckets < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 buckets, got {buckets}"
            )));
        }
        Ok(Self { buckets })
    }

    pub fn buckets(&self) -> usize {
        self.buckets
    }
}

impl Default for BucketizerSpec {
    fn default() -> Self {
        Self { buckets: 4 }
    }
}

/// Linear-interpolation empirical quantile at `num/den` of sorted data,
/// with the interpolation position computed exactly in integers.
fn quantile_sorted(sorted: &[f64], num: usize, den: usize) -> f64 {
    let scaled = (sorted.len() - 1) * num;
    let j = scaled / den;
    let frac = (scaled % den) as f64 / den as f64;
    if frac == 0.0 || j + 1 >= sorted.len() {
        sorted[j]
    } else {
        sorted[j] + frac * (sorted[j + 1] - sorted[j])
    }
}

/// Interior bucket boundaries `q_{i/B}`, `i = 1..B−1`.
pub fn bucket_boundaries(series: &[f64], spec: BucketizerSpec) -> Result<Vec<f64>> {
    let b = spec.buckets();
    if series.len() < b {
        return Err(Error::InvalidArgument(format!(
            "series of length {} is shorter than the bucket count {b}",
            series.len()
        )));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "series has non-finite values".into(),
        ));
    }
    let mut sorted = series.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok((1..b).map(|i| quantile_sorted(&sorted, i, b)).collect())
}

/// Assigns bucket `i` to values in `[q_{(i−1)/B}, q_{i/B})`; the maximum
/// lands in bucket `B`. Boundaries equal to the series minimum are ignored,
/// so a constant series falls entirely in bucket 1.
pub fn quantile_bucketize(series: &[f64], spec: BucketizerSpec) -> Result<Labels> {
    let bounds = bucket_boundaries(series, spec)?;
    let min = series.iter().copied().fold(f64::INFINITY, f64::min);
    let values = series
        .iter()
        .map(|&v| 1 + bounds.iter().filter(|&&b| b > min && v >= b).count())
        .collect();
    Labels::new(values, spec.buckets())
}

/// First differences `s[i+1] − s[i]`.
pub fn diff_series(series: &[f64]) -> Result<Vec<f64>> {
    if series.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "differencing needs at least 2 values, got {}",
            series.len()
        )));
    }
    Ok(series.windows(2).map(|w| w[1] - w[0]).collect())
}

/// Every command-line option, as read from a TOML file. Keys are the long
/// flag names.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct RunConfig {
    pub kernel: Option<String>,
    pub estimator: Option<String>,
    pub seed: Option<u64>,
    pub repetitions: Option<usize>,
    pub obs_kind: Option<String>,
    pub observations: Option<String>,
    pub output: Option<String>,
    pub d: Option<usize>,
    pub k: Option<usize>,
    pub n: Option<usize>,
    pub p_levels: Option<Vec<f64>>,
    pub policy: Option<Vec<String>>,
    pub trials: Option<usize>,
    pub observation_model: Option<String>,
    pub sigma: Option<f64>,
    pub separation: Option<f64>,
    pub compare: Option<Vec<String>>,
    pub workers: Option<usize>,
    pub l: Option<f64>,
    pub delta: Option<f64>,
    pub alpha: Option<f64>,
    pub buckets: Option<usize>,
    pub diff: Option<bool>,
    pub column: Option<String>,
    pub paired: Option<String>,
    pub paired_column: Option<String>,
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| {
        let message = e.message().to_owned();
        let field = message.split('`').nth(1).unwrap_or("<file>").to_owned();
        Error::Config { field, message }
    })
}

/// Seed from [`SEED_ENV`], if set.
pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| Error::Config {
            field: SEED_ENV.into(),
            message: format!("`{v}` is not an unsigned 64-bit integer"),
        }),
        Err(_) => Ok(None),
    }
}
