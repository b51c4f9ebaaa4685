//! Layered configuration: defaults, then a TOML file, then `PSG4D_`
//! environment variables, then command-line flags (applied by the caller).
//!
//! Environment keys address one field as `PSG4D_<SECTION>__<KEY>`, for
//! example `PSG4D_MATCHING__VIOU_THRESHOLD=0.3`. Values are read as TOML
//! literals and fall back to plain strings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::inference::{HttpConfig, InferenceConfig};
use crate::io::SynthConfig;
use crate::metrics::MatchConfig;

pub const ENV_PREFIX: &str = "PSG4D_";
/// Env vars under the prefix that are not config fields.
const RESERVED: [&str; 2] = ["CONFIG", "LOG"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    /// Overrides the plan seed when set.
    pub seed: Option<u64>,
    /// Samples per synthetic dataset.
    pub videos: usize,
    pub data_seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self { seed: None, videos: 4, data_seed: 0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub backend: HttpConfig,
    pub inference: InferenceConfig,
    pub matching: MatchConfig,
    pub training: TrainingConfig,
    pub synthesis: SynthConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{}: {source}", path.display())]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Syntax { path: PathBuf, message: String },
    #[error("environment variable {0} does not name a config field (expected {ENV_PREFIX}<SECTION>__<KEY>)")]
    EnvKey(String),
    #[error("config field {field}: {message}")]
    Field { field: String, message: String },
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn env_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn env_layer(vars: impl IntoIterator<Item = (String, String)>) -> Result<Table, ConfigError> {
    let mut out = Table::new();
    let mut vars: Vec<_> = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    vars.sort();
    for (key, raw) in vars {
        let rest = &key[ENV_PREFIX.len()..];
        if RESERVED.contains(&rest) {
            continue;
        }
        let Some((section, field)) = rest.split_once("__") else {
            return Err(ConfigError::EnvKey(key));
        };
        if section.is_empty() || field.is_empty() {
            return Err(ConfigError::EnvKey(key));
        }
        let entry = out.entry(section.to_lowercase()).or_insert_with(|| Value::Table(Table::new()));
        if let Value::Table(t) = entry {
            t.insert(field.to_lowercase(), env_value(&raw));
        }
    }
    Ok(out)
}

/// Resolves defaults < `file` < environment. Unknown keys in any layer are
/// rejected.
pub fn resolve(file: Option<&Path>, env: impl IntoIterator<Item = (String, String)>) -> Result<Config, ConfigError> {
    let mut table = Table::try_from(Config::default()).expect("defaults serialize");
    if let Some(path) = file {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let layer: Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::Syntax { path: path.to_path_buf(), message: e.to_string() })?;
        merge(&mut table, layer);
    }
    merge(&mut table, env_layer(env)?);
    serde_path_to_error::deserialize(Value::Table(table))
        .map_err(|e| ConfigError::Field { field: e.path().to_string(), message: e.into_inner().to_string() })
}
