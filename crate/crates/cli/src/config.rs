//! Run configuration: a TOML document with one section per concern, every
//! key overridable by `--set section.key=value`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use smattn_core::bound::LogBase;
use smattn_core::data::EventFormat;
use smattn_core::model::ModelConfig;
use smattn_core::simulator::SimConfig;
use smattn_core::train::TrainConfig;
use smattn_core::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Event file; when absent the `simulate` section generates the data.
    pub events: Option<PathBuf>,
    pub format: EventFormat,
    /// Optional `item,group` map for group-wise heads.
    pub groups: Option<PathBuf>,
    pub min_user_events: usize,
    pub min_item_count: usize,
    pub split: [u32; 3],
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            events: None,
            format: EventFormat::Csv,
            groups: None,
            min_user_events: 1,
            min_item_count: 1,
            split: [8, 1, 1],
            split_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSection {
    #[serde(default)]
    pub seed: u64,
    /// Use the simulator's categories as the item group map.
    #[serde(default = "yes")]
    pub category_groups: bool,
    #[serde(flatten)]
    pub config: SimConfig,
}

fn yes() -> bool {
    true
}

/// Keys of the `simulate` section. Serde cannot reject unknown keys through
/// the flattened simulator config, so they are checked by hand.
const SIMULATE_KEYS: [&str; 8] = [
    "seed",
    "category_groups",
    "horizon",
    "users",
    "items",
    "categories",
    "max_retries",
    "generator",
];

fn check_simulate_keys(doc: &toml::Table) -> Result<()> {
    if let Some(sim) = doc.get("simulate").and_then(toml::Value::as_table) {
        if let Some(bad) = sim.keys().find(|k| !SIMULATE_KEYS.contains(&k.as_str())) {
            return Err(Error::Config(format!(
                "unknown field `{bad}` in `simulate`, expected one of {}",
                SIMULATE_KEYS.join(", ")
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub seeds: Vec<u64>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3, 4, 5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub users: usize,
    pub items: usize,
    pub seq_len: usize,
    pub eps: f64,
    pub tolerance: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            users: 2,
            items: 20,
            seq_len: 10,
            eps: 1e-5,
            tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundConfig {
    pub epsilon: f64,
    pub delta: f64,
    pub lipschitz: f64,
    pub log_base: LogBase,
}

impl Default for BoundConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            delta: 0.05,
            lipschitz: 1.0,
            log_base: LogBase::Natural,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntensityConfig {
    /// Grid points from the user's first event to the grid end.
    pub points: usize,
    /// Days the grid extends past the user's last event.
    pub extend: f64,
}

impl Default for IntensityConfig {
    fn default() -> Self {
        Self {
            points: 200,
            extend: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed of model initialization and training randomness.
    pub seed: Option<u64>,
    pub data: DataConfig,
    pub simulate: Option<SimSection>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ablate: AblateConfig,
    pub gradcheck: GradcheckConfig,
    pub bound: BoundConfig,
    pub intensity: IntensityConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            data: DataConfig::default(),
            simulate: None,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            ablate: AblateConfig::default(),
            gradcheck: GradcheckConfig::default(),
            bound: BoundConfig::default(),
            intensity: IntensityConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config("a seed is required (config `seed` or --seed)".into()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("serializing config: {e}")))
    }

    /// Resolves relative data paths against `base`.
    fn anchor_paths(&mut self, base: &Path) {
        for p in [&mut self.data.events, &mut self.data.groups].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

/// Parses an override value as a TOML literal, falling back to a bare
/// string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies a `section.key=value` override to a TOML document.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not KEY=VALUE")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("bad override key `{path}`")));
    }
    let mut table = doc;
    for k in &keys[..keys.len() - 1] {
        let entry = table
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{path}`: `{k}` is not a section")))?;
    }
    table.insert(keys[keys.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Reads the document at `path`: a TOML config, or the `config` field of a
/// JSON run manifest.
fn read_document(path: &Path) -> Result<toml::Table> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "json") {
        let manifest: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let config = manifest
            .get("config")
            .ok_or_else(|| Error::Config(format!("{} has no `config` field", path.display())))?;
        let toml_value = toml::Value::try_from(config)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        return toml_value
            .as_table()
            .cloned()
            .ok_or_else(|| Error::Config("manifest config is not a table".into()));
    }
    text.parse::<toml::Table>()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Loads a config (or defaults when `path` is `None`), applies the overrides
/// and resolves relative paths against the config file's directory.
pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<RunConfig> {
    let mut doc = match path {
        Some(p) => read_document(p)?,
        None => toml::Table::new(),
    };
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    check_simulate_keys(&doc)?;
    let mut cfg: RunConfig = toml::Value::Table(doc)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    if seed.is_some() {
        cfg.seed = seed;
    }
    if let Some(p) = path {
        let is_manifest = p.extension().is_some_and(|e| e == "json");
        if !is_manifest {
            cfg.anchor_paths(p.parent().unwrap_or(Path::new(".")));
        }
    }
    Ok(cfg)
}
