//! Results files: a run manifest plus the command's payload, as JSON with a
//! fixed key order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timing {
    pub started_unix_ms: u128,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub flags: BTreeMap<String, Value>,
    pub seed: Option<u64>,
    pub version: String,
    pub input_digests: BTreeMap<String, String>,
    pub timing: Timing,
}

/// Collects manifest fields while a command runs.
#[derive(Debug)]
pub struct ManifestBuilder {
    command: String,
    flags: BTreeMap<String, Value>,
    seed: Option<u64>,
    inputs: BTreeMap<String, String>,
    started: Instant,
    started_unix_ms: u128,
}

impl ManifestBuilder {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_owned(),
            flags: BTreeMap::new(),
            seed: None,
            inputs: BTreeMap::new(),
            started: Instant::now(),
            started_unix_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_millis()),
        }
    }

    pub fn flag(&mut self, name: &str, value: impl Serialize) -> &mut Self {
        let v = serde_json::to_value(value).unwrap_or(Value::Null);
        self.flags.insert(name.to_owned(), v);
        self
    }

    pub fn seed(&mut self, seed: u64) -> &mut Self {
        self.seed = Some(seed);
        self
    }

    /// Records the SHA-256 digest of an input file.
    pub fn input(&mut self, path: &Path) -> Result<&mut Self> {
        let bytes = fs::read(path)?;
        self.inputs.insert(
            path.display().to_string(),
            hex::encode(Sha256::digest(&bytes)),
        );
        Ok(self)
    }

    pub fn finish(&self) -> RunManifest {
        RunManifest {
            command: self.command.clone(),
            flags: self.flags.clone(),
            seed: self.seed,
            version: env!("CARGO_PKG_VERSION").to_owned(),
            input_digests: self.inputs.clone(),
            timing: Timing {
                started_unix_ms: self.started_unix_ms,
                elapsed_ms: self.started.elapsed().as_secs_f64() * 1e3,
            },
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ResultsFile<'a, T: Serialize> {
    pub manifest: RunManifest,
    pub result: &'a T,
}

pub fn to_json<T: Serialize>(manifest: RunManifest, result: &T) -> String {
    let file = ResultsFile { manifest, result };
    serde_json::to_string_pretty(&file).expect("results serialize") + "\n"
}

pub fn write_results<T: Serialize>(path: &Path, manifest: RunManifest, result: &T) -> Result<()> {
    fs::write(path, to_json(manifest, result))?;
    Ok(())
}
