//! `manifest.json`: what ran, with which config, from which source, and how
//! it ended.

use std::path::Path;
use std::process::Command;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::FlatConfig;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    /// Resolved training config, flat dotted keys; absent for commands without one.
    pub config: Option<FlatConfig>,
    pub config_hash: Option<String>,
    pub source_revision: String,
    pub version: String,
    pub device: String,
    /// Unix seconds.
    pub started_at: u64,
    pub finished_at: Option<u64>,
    pub outcome: Option<Outcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub exit_code: i32,
    pub message: Option<String>,
}

pub fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// `git rev-parse HEAD` of the working directory, or "unknown".
pub fn source_revision() -> String {
    Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

impl RunManifest {
    pub fn start(command: &str, args: Vec<String>, device: &str) -> Self {
        Self {
            command: command.into(),
            args,
            config: None,
            config_hash: None,
            source_revision: source_revision(),
            version: env!("CARGO_PKG_VERSION").into(),
            device: device.into(),
            started_at: now(),
            finished_at: None,
            outcome: None,
        }
    }

    pub fn with_config(mut self, cfg: &transfig_core::TrainConfig) -> Result<Self> {
        self.config = Some(crate::config::flatten(cfg)?);
        self.config_hash = Some(crate::config::config_hash(cfg)?);
        Ok(self)
    }

    pub fn finish(&mut self, exit_code: i32, message: Option<String>) {
        self.finished_at = Some(now());
        self.outcome = Some(Outcome { exit_code, message });
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        crate::fsutil::write_atomic(&dir.join("manifest.json"), &serde_json::to_vec_pretty(self)?)
    }
}
