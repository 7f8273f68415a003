//! On-disk layout of results and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use quadbench::env::ObsConfig;
use serde::{Deserialize, Serialize};

use crate::{Config, HarnessError};

pub const TOOL: &str = env!("CARGO_PKG_NAME");
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    /// Snapshot of the resolved configuration, relative to the root.
    pub config_file: String,
}

/// Result directory tree rooted at one output directory.
#[derive(Debug, Clone)]
pub struct Store {
    pub root: PathBuf,
}

impl Store {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    /// Writes the manifest and config snapshot, refusing to mix configurations in one root.
    pub fn open(&self, cfg: &Config) -> Result<Manifest, HarnessError> {
        let manifest = Manifest {
            tool: TOOL.into(),
            version: VERSION.into(),
            config_hash: cfg.hash(),
            config_file: "config.toml".into(),
        };
        if let Ok(text) = fs::read_to_string(self.manifest_path()) {
            let old: Manifest =
                serde_json::from_str(&text).map_err(|e| HarnessError::Missing(format!("unreadable manifest: {e}")))?;
            if old.config_hash != manifest.config_hash {
                return Err(HarnessError::Usage(format!(
                    "output root {} was produced with config {}, current config is {}; choose another root",
                    self.root.display(),
                    old.config_hash,
                    manifest.config_hash
                )));
            }
            return Ok(old);
        }
        write_atomic(&self.root.join(&manifest.config_file), cfg.canonical().as_bytes())?;
        write_atomic(&self.manifest_path(), serde_json::to_string_pretty(&manifest).expect("manifest").as_bytes())?;
        Ok(manifest)
    }

    pub fn train_dir(&self, obs: &ObsConfig, seed: u64) -> PathBuf {
        self.root.join("train").join(format!("{}-H{}", obs.name(), obs.history)).join(format!("seed{seed}"))
    }

    pub fn policy_path(&self, obs: &ObsConfig, seed: u64) -> PathBuf {
        self.train_dir(obs, seed).join("policy.ckpt")
    }

    pub fn curve_path(&self, obs: &ObsConfig, seed: u64) -> PathBuf {
        self.train_dir(obs, seed).join("curve.csv")
    }

    pub fn benchmark_dir(&self) -> PathBuf {
        self.root.join("benchmark")
    }

    pub fn stress_dir(&self) -> PathBuf {
        self.root.join("stress")
    }
}

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
