//! Training configuration files: JSON objects with flat dotted keys such as
//! `"optimizer.lr": 0.0001`, layered over a named preset.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use transfig_core::TrainConfig;

use crate::error::{io_at, AppError, Result};

pub type FlatConfig = BTreeMap<String, Value>;

/// Full-size image edge and epoch count. The epoch count is a documented
/// default, not a measured optimum.
pub const FULL_IMAGE_SIZE: usize = 128;
pub const FULL_EPOCHS: usize = 200;
pub const DESK_IMAGE_SIZE: usize = 32;

pub fn preset(name: &str) -> Result<TrainConfig> {
    match name {
        "full" => Ok(TrainConfig::new(FULL_IMAGE_SIZE, FULL_EPOCHS)),
        "desk" => Ok(TrainConfig::desk(DESK_IMAGE_SIZE)),
        other => Err(AppError::Usage(format!("unknown preset `{other}` (expected full or desk)"))),
    }
}

fn flatten_into(prefix: &str, value: &Value, out: &mut FlatConfig) {
    match value {
        Value::Object(map) if !map.is_empty() => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten_into(&key, v, out);
            }
        }
        leaf => {
            out.insert(prefix.to_string(), leaf.clone());
        }
    }
}

pub fn flatten(cfg: &TrainConfig) -> Result<FlatConfig> {
    let mut out = FlatConfig::new();
    flatten_into("", &serde_json::to_value(cfg)?, &mut out);
    Ok(out)
}

fn unflatten(flat: &FlatConfig) -> Value {
    let mut root = Map::new();
    for (key, value) in flat {
        let mut node = &mut root;
        let mut parts = key.split('.').peekable();
        while let Some(part) = parts.next() {
            if parts.peek().is_none() {
                node.insert(part.to_string(), value.clone());
            } else {
                node = node
                    .entry(part)
                    .or_insert_with(|| Value::Object(Map::new()))
                    .as_object_mut()
                    .expect("dotted keys never collide with leaves");
            }
        }
    }
    Value::Object(root)
}

/// Applies `overrides` to `base`. Every key must already exist. A new
/// `total_epochs` without an explicit `stage_switch_epoch` moves the switch
/// to the new midpoint.
pub fn apply(base: &TrainConfig, overrides: &FlatConfig) -> Result<TrainConfig> {
    let mut flat = flatten(base)?;
    if let Some(total) = overrides.get("total_epochs").and_then(Value::as_u64) {
        if !overrides.contains_key("stage_switch_epoch") {
            flat.insert("stage_switch_epoch".into(), Value::from(total / 2));
        }
    }
    for (key, value) in overrides {
        match flat.get_mut(key) {
            Some(slot) => *slot = value.clone(),
            None => return Err(AppError::Usage(format!("unknown config key `{key}`"))),
        }
    }
    let cfg: TrainConfig = serde_json::from_value(unflatten(&flat))
        .map_err(|e| AppError::Usage(format!("invalid config value: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads a config file. Nested objects are accepted and flattened.
pub fn read_file(path: &Path) -> Result<FlatConfig> {
    let text = fs::read_to_string(path).map_err(io_at(path))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| AppError::Usage(format!("{}: {e}", path.display())))?;
    if !value.is_object() {
        return Err(AppError::Usage(format!("{}: expected a JSON object", path.display())));
    }
    let mut out = FlatConfig::new();
    flatten_into("", &value, &mut out);
    Ok(out)
}

/// Parses `key=value`; the value is JSON when it parses, a string otherwise.
pub fn parse_override(s: &str) -> Result<(String, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| AppError::Usage(format!("override `{s}` is not key=value")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

/// Preset, then file keys, then `--set` overrides.
pub fn resolve(preset_name: &str, file: Option<&Path>, sets: &[String]) -> Result<TrainConfig> {
    let mut overrides = match file {
        Some(p) => read_file(p)?,
        None => FlatConfig::new(),
    };
    for s in sets {
        let (k, v) = parse_override(s)?;
        overrides.insert(k, v);
    }
    apply(&preset(preset_name)?, &overrides)
}

pub fn to_json(cfg: &TrainConfig) -> Result<String> {
    Ok(serde_json::to_string_pretty(&flatten(cfg)?)?)
}

pub fn write(cfg: &TrainConfig, path: &Path) -> Result<()> {
    crate::fsutil::write_atomic(path, to_json(cfg)?.as_bytes())
}

/// Hex SHA-256 of the flat JSON form; equal configs hash equal.
pub fn config_hash(cfg: &TrainConfig) -> Result<String> {
    let bytes = serde_json::to_vec(&flatten(cfg)?)?;
    Ok(hex::encode(Sha256::digest(bytes)))
}
