//! `manifest.json`: what produced an output directory and what it contains.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use super::write_atomic;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub completed: bool,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_digest: String,
    pub code_version: String,
    pub seed: u64,
    pub stages: BTreeMap<String, StageRecord>,
    /// Path relative to the output directory → SHA-256 of the content.
    pub files: BTreeMap<String, String>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunManifest {
    /// Load the manifest of `cfg.output_dir`, or start a new one. A manifest
    /// written for a different configuration is replaced.
    pub fn open(cfg: &ExperimentConfig) -> Result<Self> {
        let digest = cfg.digest();
        let path = cfg.output_dir.join(MANIFEST_FILE);
        if path.exists() {
            let raw = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let m: RunManifest = serde_json::from_slice(&raw)?;
            if m.config_digest == digest {
                return Ok(m);
            }
            log::warn!("{} belongs to another configuration; starting over", path.display());
        }
        Ok(Self {
            config_digest: digest,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: cfg.generation.seed,
            stages: BTreeMap::new(),
            files: BTreeMap::new(),
        })
    }

    pub fn start_stage(&mut self, stage: &str) {
        self.stages.insert(stage.to_string(), StageRecord { completed: false, started_unix: now(), finished_unix: None });
    }

    pub fn finish_stage(&mut self, stage: &str) {
        let rec = self.stages.entry(stage.to_string()).or_default();
        rec.completed = true;
        rec.finished_unix = Some(now());
    }

    pub fn stage_completed(&self, stage: &str) -> bool {
        self.stages.get(stage).is_some_and(|s| s.completed)
    }

    /// Rehash every file under `dir` except the manifest and partial files.
    pub fn refresh_files(&mut self, dir: &Path) -> Result<()> {
        self.files.clear();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            let entries = std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))?;
            for entry in entries {
                let entry = entry.map_err(|e| Error::io(&d, e))?;
                let path = entry.path();
                let name = entry.file_name().to_string_lossy().to_string();
                if name.starts_with('.') || name == MANIFEST_FILE {
                    continue;
                }
                if path.is_dir() {
                    stack.push(path);
                    continue;
                }
                let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
                let rel = path.strip_prefix(dir).unwrap_or(&path).to_string_lossy().replace('\\', "/");
                self.files.insert(rel, hex::encode(Sha256::digest(&bytes)));
            }
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join(MANIFEST_FILE), &serde_json::to_vec_pretty(self)?)
    }
}
