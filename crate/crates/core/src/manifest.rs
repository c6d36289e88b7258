//! Per-run manifest: what was run, with which configuration, and what it wrote.
//!
//! The manifest is the one file of a run that carries wall-clock data
//! (timestamps and timings); every other CSV/JSON output is a pure function of
//! the inputs and the seed.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::gp::MODEL_VERSION;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub mobgp: String,
    pub model_format: u32,
}

impl Default for Versions {
    fn default() -> Self {
        Self {
            mobgp: env!("CARGO_PKG_VERSION").to_string(),
            model_format: MODEL_VERSION,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    /// sha256 of the compact JSON of `config`.
    pub config_digest: String,
    pub seed: u64,
    pub versions: Versions,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    /// Wall times of the run's phases in milliseconds.
    pub timings_ms: BTreeMap<String, f64>,
    /// Files written by the run, relative to the output directory.
    pub outputs: Vec<String>,
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

pub fn config_digest(config: &serde_json::Value) -> String {
    // serde_json maps are ordered, so the compact form is canonical
    let text = serde_json::to_string(config).unwrap_or_default();
    hex::encode(Sha256::digest(text.as_bytes()))
}

impl RunManifest {
    pub fn start(command: &str, config: serde_json::Value, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            config_digest: config_digest(&config),
            config,
            seed,
            versions: Versions::default(),
            started_unix_ms: now_ms(),
            finished_unix_ms: 0,
            timings_ms: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn output(&mut self, name: impl Into<String>) {
        let name = name.into();
        if !self.outputs.contains(&name) {
            self.outputs.push(name);
        }
    }

    pub fn timing(&mut self, phase: &str, ms: f64) {
        self.timings_ms.insert(phase.to_string(), ms);
    }

    /// Stamps the finish time and writes `manifest.json` into `dir`.
    pub fn finish(mut self, dir: &Path) -> Result<Self> {
        self.output(MANIFEST_FILE);
        self.finished_unix_ms = now_ms();
        let text = serde_json::to_string_pretty(&self)?;
        std::fs::write(dir.join(MANIFEST_FILE), text + "\n")?;
        Ok(self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn digest_depends_only_on_config() {
        let a = RunManifest::start("fit", json!({"b": 1, "a": [1.5, 2]}), 3);
        let b = RunManifest::start("fit", json!({"a": [1.5, 2], "b": 1}), 3);
        assert_eq!(a.config_digest, b.config_digest);
        let c = RunManifest::start("fit", json!({"a": [1.5, 2], "b": 2}), 3);
        assert_ne!(a.config_digest, c.config_digest);
        assert_eq!(a.config_digest.len(), 64);
    }

    #[test]
    fn finish_writes_and_lists_itself() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::start("simulate", json!({}), 7);
        m.output("states.csv");
        m.output("states.csv");
        m.timing("simulate", 1.25);
        let m = m.finish(dir.path()).unwrap();
        assert_eq!(m.outputs, vec!["states.csv", MANIFEST_FILE]);
        let back = RunManifest::load(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(back, m);
        assert!(back.finished_unix_ms >= back.started_unix_ms);
    }
}
