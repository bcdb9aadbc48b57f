use std::path::{Path, PathBuf};

use serde::Serialize;
use smattn_core::{Error, Result};

use crate::config::RunConfig;

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub command: &'a str,
    pub version: &'a str,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub overrides: &'a [String],
    /// Fully resolved configuration; pass this file back as `--config` to
    /// repeat the run.
    pub config: serde_json::Value,
    pub outputs: Vec<String>,
    pub wall_time_seconds: f64,
}

/// The resolved configuration as JSON (absent optional keys omitted).
pub fn config_json(cfg: &RunConfig) -> Result<serde_json::Value> {
    let value = toml::Value::try_from(cfg).map_err(|e| Error::Config(e.to_string()))?;
    serde_json::to_value(value).map_err(|e| Error::Config(e.to_string()))
}

pub fn relative_names(out: &Path, files: &[PathBuf]) -> Vec<String> {
    files
        .iter()
        .map(|f| f.strip_prefix(out).unwrap_or(f).display().to_string())
        .collect()
}
