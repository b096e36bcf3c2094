use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::episode::StepLog;
use super::HarnessError;

/// Run provenance written next to every output set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub scenario: String,
    pub config_sha256: String,
    pub seed: u64,
    pub version: String,
    pub files: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, scenario: &str, config_text: &str, seed: u64) -> Self {
        Self {
            command: command.into(),
            scenario: scenario.into(),
            config_sha256: config_hash(config_text),
            seed,
            version: env!("CARGO_PKG_VERSION").into(),
            files: Vec::new(),
        }
    }
}

pub fn config_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(w, value)?;
    Ok(())
}

pub fn read_log_csv(path: &Path) -> Result<Vec<StepLog>, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}
