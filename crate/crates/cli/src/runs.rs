//! Run-directory bookkeeping: every run persists its resolved config,
//! the SHA-256 of each input artifact, its metrics, and any checkpoint,
//! so an experiment is fully reconstructable from its output directory.

use crate::config::HarnessConfig;
use crate::error::{CliError, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::runtime(format!("cannot hash {}: {e}", path.display())))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

#[derive(Debug, Serialize)]
pub struct InputManifest {
    pub config_sha256: String,
    /// (label, path, sha256) per input file.
    pub inputs: Vec<(String, String, String)>,
}

pub struct RunDir {
    pub dir: PathBuf,
    inputs: Vec<(String, String, String)>,
    config_sha256: String,
}

impl RunDir {
    /// Create `out_dir/run_id/` and snapshot the resolved config there.
    pub fn create(cfg: &HarnessConfig, run_id: &str) -> Result<RunDir> {
        let dir = cfg.out_dir.join(run_id);
        std::fs::create_dir_all(&dir)
            .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", dir.display())))?;
        let snapshot = serde_json::to_string_pretty(cfg)
            .map_err(|e| CliError::runtime(e.to_string()))?;
        let config_path = dir.join("config.json");
        std::fs::write(&config_path, snapshot)
            .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", config_path.display())))?;
        let config_sha256 = sha256_file(&config_path)?;
        Ok(RunDir { dir, inputs: Vec::new(), config_sha256 })
    }

    /// Record an input file's hash in the lineage manifest.
    pub fn track_input(&mut self, label: &str, path: &Path) -> Result<()> {
        let hash = sha256_file(path)?;
        self.inputs.push((label.to_string(), path.display().to_string(), hash));
        Ok(())
    }

    /// Write `inputs.json` with the config and input hashes.
    pub fn write_input_manifest(&self) -> Result<()> {
        let manifest = InputManifest {
            config_sha256: self.config_sha256.clone(),
            inputs: self.inputs.clone(),
        };
        let path = self.dir.join("inputs.json");
        let text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| CliError::runtime(e.to_string()))?;
        std::fs::write(&path, text)
            .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))?;
        Ok(())
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.dir.join("metrics.csv")
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.dir.join("checkpoint.bin")
    }
}
