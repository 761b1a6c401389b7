//! Run manifest: enough to repeat a run exactly.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::files::sha256_file;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Full configuration snapshot, `key -> value`.
    pub config: BTreeMap<String, String>,
    /// Inputs by role (`volume`, `distance_map`, `gt`).
    pub inputs: BTreeMap<String, InputRecord>,
    pub order_mode: String,
    pub timings: Vec<StageTiming>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: BTreeMap<String, String>, order_mode: &str) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config,
            inputs: BTreeMap::new(),
            order_mode: order_mode.into(),
            timings: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, role: &str, path: &Path) -> Result<()> {
        let sha256 = sha256_file(path)?;
        self.inputs.insert(
            role.into(),
            InputRecord {
                path: path.to_path_buf(),
                sha256,
            },
        );
        Ok(())
    }

    /// Config as `key = value` text, readable by the configuration loader.
    pub fn config_text(&self) -> String {
        self.config.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").with_context(|| format!("cannot write {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }

    /// Fails when an input no longer matches its recorded hash.
    pub fn verify_inputs(&self) -> Result<()> {
        for (role, rec) in &self.inputs {
            let now = sha256_file(&rec.path)?;
            anyhow::ensure!(
                now == rec.sha256,
                "{role} input {} changed since the run (sha256 {} != {})",
                rec.path.display(),
                now,
                rec.sha256
            );
        }
        Ok(())
    }
}
