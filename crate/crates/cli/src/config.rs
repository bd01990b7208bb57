//! Layered run configuration: preset defaults, then a JSON file, then
//! `key=value` overrides and flags.

use std::path::Path;

use serde_json::Value;
use tangent_core::pipeline::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("config file {path} is not valid JSON: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
    #[error("--override {0}: expected key=value")]
    Malformed(String),
    #[error("--override {key}: no such key in the configuration")]
    UnknownKey { key: String },
    #[error("unknown preset `{0}` (expected wave, swiss_roll or torus)")]
    Preset(String),
    #[error("invalid configuration: {0}")]
    Invalid(serde_json::Error),
}

/// Defaults for a dataset name.
pub fn preset(name: &str) -> Result<RunConfig, ConfigError> {
    match name {
        "wave" | "wave_on_circle" => Ok(RunConfig::wave()),
        "swiss_roll" | "swissroll" => Ok(RunConfig::swiss_roll()),
        "torus" | "truncated_torus" => Ok(RunConfig::torus()),
        other => Err(ConfigError::Preset(other.to_string())),
    }
}

pub fn read_file(path: &Path) -> Result<Value, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
        path: path.display().to_string(),
        source,
    })
}

/// Recursively overlays `top` on `base`. Objects tagged with different
/// `name`s (dataset variants) are replaced, not merged.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            let retagged = matches!((b.get("name"), t.get("name")), (Some(x), Some(y)) if x != y);
            if retagged {
                *b = t;
                return;
            }
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, t) => *slot = t,
    }
}

/// Applies one `dotted.key=value` override. The value is parsed as JSON
/// and taken as a string otherwise.
pub fn apply_override(config: &mut Value, spec: &str) -> Result<(), ConfigError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::Malformed(spec.to_string()))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(ConfigError::Malformed(spec.to_string()));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let unknown = || ConfigError::UnknownKey {
        key: key.to_string(),
    };
    let mut node = config;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        node = match node {
            Value::Object(map) => map.get_mut(*part).ok_or_else(unknown)?,
            Value::Array(items) => {
                let idx: usize = part.parse().map_err(|_| unknown())?;
                items.get_mut(idx).ok_or_else(unknown)?
            }
            _ => return Err(unknown()),
        };
        if last {
            *node = value;
            return Ok(());
        }
    }
    Err(unknown())
}

/// Resolves the configuration from a preset, an optional file and overrides.
pub fn resolve(
    preset_name: Option<&str>,
    file: Option<&Path>,
    overrides: &[String],
) -> Result<RunConfig, ConfigError> {
    let file_value = file.map(read_file).transpose()?;
    let file_dataset = file_value
        .as_ref()
        .and_then(|v| v.pointer("/dataset/name"))
        .and_then(Value::as_str)
        .map(str::to_string);
    let base = match (preset_name, file_dataset.as_deref()) {
        (Some(p), _) => preset(p)?,
        (None, Some(name)) => preset(name).unwrap_or_else(|_| RunConfig::wave()),
        (None, None) => RunConfig::wave(),
    };
    let mut value = serde_json::to_value(&base).map_err(ConfigError::Invalid)?;
    if let Some(top) = file_value {
        merge(&mut value, top);
    }
    for spec in overrides {
        apply_override(&mut value, spec)?;
    }
    serde_json::from_value(value).map_err(ConfigError::Invalid)
}
