use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};

/// One result table; rows are keyed by their leading columns so merged
/// output does not depend on the order cells finished in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report<R> {
    pub name: String,
    /// Profile line from the config, repeated at the top of the CSV.
    pub header: String,
    pub rows: Vec<R>,
}

impl<R: Serialize> Report<R> {
    /// CSV with a leading `# header` comment line.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)
                .map_err(|e| Error::invalid(format!("csv: {e}")))?;
        }
        let body = w
            .into_inner()
            .map_err(|e| Error::invalid(format!("csv: {}", e.error())))?;
        Ok(format!(
            "# {}\n{}",
            self.header,
            String::from_utf8_lossy(&body)
        ))
    }

    /// Writes `<name>.csv` and `<name>.json` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir)?;
        let csv_path = dir.join(format!("{}.csv", self.name));
        let json_path = dir.join(format!("{}.json", self.name));
        fs::write(&csv_path, self.to_csv()?)?;
        let json =
            serde_json::to_string_pretty(self).map_err(|e| Error::invalid(format!("json: {e}")))?;
        fs::write(&json_path, json)?;
        Ok((csv_path, json_path))
    }
}

/// Record written next to every driver's results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: String,
    pub header: String,
    /// Config as TOML, after overrides.
    pub config: String,
    pub seeds: Vec<u64>,
    /// Input files (checkpoints, datasets) with their SHA-256.
    pub inputs: Vec<(String, String)>,
    /// SHA-256 over the config text and every input hash, in order.
    pub content_hash: String,
    pub crate_version: String,
}

impl Manifest {
    pub fn new(
        experiment: &str,
        cfg: &ExperimentConfig,
        inputs: Vec<(String, String)>,
    ) -> Result<Self> {
        let config = cfg.to_toml()?;
        let mut h = Sha256::new();
        h.update(config.as_bytes());
        for (name, digest) in &inputs {
            h.update(name.as_bytes());
            h.update([0]);
            h.update(digest.as_bytes());
        }
        Ok(Self {
            experiment: experiment.to_string(),
            header: cfg.profile_header(),
            config,
            seeds: cfg.seeds.clone(),
            inputs,
            content_hash: hex::encode(h.finalize()),
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
        })
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(format!("{}.manifest.json", self.experiment));
        let json =
            serde_json::to_string_pretty(self).map_err(|e| Error::invalid(format!("json: {e}")))?;
        fs::write(&path, json)?;
        Ok(path)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}
