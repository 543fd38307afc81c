//! On-disk layout of an experiment directory.
//!
//! ```text
//! <out>/config.json          resolved configuration snapshot
//! <out>/datasets/<name>/     manifest.json + data.bin per dataset
//! <out>/checkpoints/*.ckpt
//! <out>/logs/*.jsonl         per-step loss logs
//! <out>/reports/             summary.json, results.csv, bench.*, ablation.*
//! <out>/ablation/<arm>/      per-arm checkpoint and log
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::Resolved;
use crate::error::CliError;

pub const CONFIG_FILE: &str = "config.json";

pub const DATASETS: [&str; 6] = ["pretrain", "unlabeled", "finetune", "degraded", "holdout", "unlabeled-holdout"];

#[derive(Clone, Debug)]
pub struct ExperimentDir {
    pub root: PathBuf,
}

impl ExperimentDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join(CONFIG_FILE)
    }

    pub fn dataset(&self, name: &str) -> PathBuf {
        self.root.join("datasets").join(name)
    }

    pub fn checkpoint(&self, stage: &str) -> PathBuf {
        self.root.join("checkpoints").join(format!("{stage}.ckpt"))
    }

    pub fn log(&self, stage: &str) -> PathBuf {
        self.root.join("logs").join(format!("{stage}.jsonl"))
    }

    pub fn report(&self, file: &str) -> PathBuf {
        self.root.join("reports").join(file)
    }

    pub fn arm(&self, arm: &str) -> PathBuf {
        self.root.join("ablation").join(arm)
    }

    /// Claims the directory for `cfg`.
    ///
    /// A directory holding a snapshot of a different configuration is refused
    /// unless `force` is set, in which case its previous contents are removed.
    /// Returns true when an existing snapshot of the same configuration was found.
    pub fn claim(&self, cfg: &Resolved, force: bool) -> Result<bool, CliError> {
        let snapshot = cfg.snapshot();
        let path = self.config();
        let mut reused = false;
        if path.exists() {
            let existing = fs::read_to_string(&path)?;
            if existing == snapshot && !force {
                reused = true;
            } else if !force {
                return Err(CliError::Config(format!(
                    "{} holds artifacts of a different configuration; pass --force to replace them",
                    self.root.display()
                )));
            } else {
                for sub in ["datasets", "checkpoints", "logs", "reports", "ablation"] {
                    let p = self.root.join(sub);
                    if p.exists() {
                        fs::remove_dir_all(&p)?;
                    }
                }
            }
        }
        fs::create_dir_all(&self.root)?;
        write_atomic(&path, snapshot.as_bytes())?;
        Ok(reused)
    }
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
