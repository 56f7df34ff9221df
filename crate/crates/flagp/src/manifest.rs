//! Per-run provenance record.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::io::write_json;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub flagp_version: &'static str,
    pub seed: u64,
    pub config_sha256: String,
    pub config: RunConfig,
    /// SHA-256 of every input file, keyed by path.
    pub inputs: BTreeMap<String, String>,
}

pub fn file_sha256(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig, inputs: &[&Path]) -> CliResult<Self> {
        let mut hashes = BTreeMap::new();
        for p in inputs {
            hashes.insert(p.display().to_string(), file_sha256(p)?);
        }
        Ok(Self {
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            flagp_version: env!("CARGO_PKG_VERSION"),
            seed: config.seed,
            config_sha256: config.hash(),
            config: config.clone(),
            inputs: hashes,
        })
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        write_json(path, self)
    }
}

/// `<file>.manifest.json` beside a single-file output.
pub fn beside(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}
