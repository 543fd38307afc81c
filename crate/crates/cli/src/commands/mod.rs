mod ablate;
mod bench;
mod gen;
mod pipeline;
mod verify;

pub use ablate::{arm_name, cmd_ablate, AblationArm, ABLATION_HEADER};
pub use bench::cmd_bench;
pub use gen::cmd_gen;
pub use pipeline::{cmd_pipeline, RESULTS_HEADER};
pub use verify::cmd_verify;

use std::path::Path;

use serde::Serialize;
use vlcd_core::evaluation::{evaluate_five_splits, retrieval_accuracy, EvalReport};
use vlcd_core::synthdata::{streams, Dataset, World};
use vlcd_core::training::{load_checkpoint, Checkpoint, StepRecord, TrainOutcome};

use crate::cli::CommonArgs;
use crate::config::{ExperimentConfig, Resolved};
use crate::error::CliError;
use crate::layout::{write_atomic, ExperimentDir, DATASETS};

/// A resolved configuration bound to its experiment directory.
pub struct Context {
    pub dir: ExperimentDir,
    pub cfg: Resolved,
    pub hash: String,
    /// The directory already held a snapshot of this exact configuration.
    pub reused: bool,
}

pub fn resolve_config(common: &CommonArgs) -> Result<Resolved, CliError> {
    let mut raw = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        raw.seed = seed;
    }
    raw.resolve()
}

impl Context {
    pub fn open(common: &CommonArgs) -> Result<Self, CliError> {
        let cfg = resolve_config(common)?;
        let dir = ExperimentDir::new(&common.out);
        let reused = dir.claim(&cfg, common.force)?;
        Ok(Self {
            hash: cfg.hash(),
            dir,
            cfg,
            reused,
        })
    }

    /// Binds the configuration to `--out` without claiming or modifying the directory.
    pub fn attach(common: &CommonArgs) -> Result<Self, CliError> {
        let cfg = resolve_config(common)?;
        Ok(Self {
            hash: cfg.hash(),
            dir: ExperimentDir::new(&common.out),
            cfg,
            reused: true,
        })
    }

    /// Loads `checkpoints/<stage>.ckpt` when this configuration produced it,
    /// otherwise trains it with `train` and stores checkpoint and loss log.
    pub fn stage(
        &self,
        stage: &str,
        train: impl FnOnce() -> vlcd_core::Result<TrainOutcome>,
    ) -> Result<Checkpoint, CliError> {
        let ckpt_path = self.dir.checkpoint(stage);
        let log_path = self.dir.log(stage);
        if self.reused && ckpt_path.exists() && log_path.exists() {
            if let Ok(c) = load_checkpoint(&ckpt_path) {
                if c.meta.config_hash == self.hash {
                    eprintln!("[{stage}] reusing {}", ckpt_path.display());
                    return Ok(c);
                }
            }
        }
        eprintln!("[{stage}] training");
        let outcome = train().map_err(CliError::stage(stage))?;
        self.store(outcome, &ckpt_path, &log_path, stage)
    }

    pub fn store(&self, outcome: TrainOutcome, ckpt: &Path, log: &Path, stage: &str) -> Result<Checkpoint, CliError> {
        write_atomic(log, outcome.log_jsonl().as_bytes())?;
        let mut c = outcome.checkpoint;
        c.meta.config_hash = self.hash.clone();
        if let Some(dir) = ckpt.parent() {
            std::fs::create_dir_all(dir)?;
        }
        c.save(ckpt)
            .map_err(|e| CliError::stage(stage)(vlcd_core::Error::Checkpoint(e)))?;
        Ok(c)
    }

    pub fn write_json<T: Serialize>(&self, path: &Path, value: &T) -> Result<(), CliError> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        write_atomic(path, s.as_bytes())
    }
}

/// All generated datasets of one experiment.
pub struct Datasets {
    pub pretrain: Dataset,
    pub unlabeled: Dataset,
    pub finetune: Dataset,
    pub degraded: Dataset,
    pub holdout: Dataset,
    pub unlabeled_holdout: Dataset,
}

impl Datasets {
    pub fn generate(cfg: &Resolved) -> Result<Self, CliError> {
        let gen = |e: vlcd_core::Error| CliError::stage("gen")(e);
        let world = World::new(&cfg.world).map_err(gen)?;
        let s = &cfg.sizes;
        Ok(Self {
            pretrain: world.pretrain_pairs(s.pretrain, streams::PRETRAIN).map_err(gen)?,
            unlabeled: world.unlabeled_corpus(s.unlabeled, streams::UNLABELED).map_err(gen)?,
            finetune: world.finetune_labeled(s.finetune, streams::FINETUNE).map_err(gen)?,
            degraded: world.degraded_set(s.degraded, streams::DEGRADED).map_err(gen)?,
            holdout: world.pretrain_pairs(s.holdout, streams::HOLDOUT).map_err(gen)?,
            unlabeled_holdout: world
                .unlabeled_corpus(s.unlabeled_holdout, streams::UNLABELED_HOLDOUT)
                .map_err(gen)?,
        })
    }

    pub fn named(&self) -> [(&'static str, &Dataset); 6] {
        [
            (DATASETS[0], &self.pretrain),
            (DATASETS[1], &self.unlabeled),
            (DATASETS[2], &self.finetune),
            (DATASETS[3], &self.degraded),
            (DATASETS[4], &self.holdout),
            (DATASETS[5], &self.unlabeled_holdout),
        ]
    }

    pub fn save(&self, dir: &ExperimentDir) -> Result<(), CliError> {
        for (name, d) in self.named() {
            d.save(&dir.dataset(name))?;
        }
        Ok(())
    }

    pub fn exist(dir: &ExperimentDir) -> bool {
        DATASETS.iter().all(|n| dir.dataset(n).join("manifest.json").exists())
    }

    pub fn load(dir: &ExperimentDir, world_hash: &str) -> Result<Self, CliError> {
        for n in DATASETS {
            let p = dir.dataset(n);
            if !p.join("manifest.json").exists() {
                return Err(CliError::MissingArtifact(format!(
                    "dataset {} not found; run `vlcd gen` or pass --gen",
                    p.display()
                )));
            }
        }
        let load = |n: &str| Dataset::load_checked(&dir.dataset(n), world_hash).map_err(CliError::from);
        Ok(Self {
            pretrain: load(DATASETS[0])?,
            unlabeled: load(DATASETS[1])?,
            finetune: load(DATASETS[2])?,
            degraded: load(DATASETS[3])?,
            holdout: load(DATASETS[4])?,
            unlabeled_holdout: load(DATASETS[5])?,
        })
    }

    /// Loads the datasets, generating and saving them first if `gen` is set and any is missing.
    pub fn obtain(ctx: &Context, gen: bool) -> Result<Self, CliError> {
        if gen && !Self::exist(&ctx.dir) {
            eprintln!("[gen] generating datasets");
            let d = Self::generate(&ctx.cfg)?;
            d.save(&ctx.dir)?;
            return Ok(d);
        }
        Self::load(&ctx.dir, ctx.cfg.world.hash().as_str())
    }
}

/// Clean and degraded probe reports plus holdout retrieval of one encoder.
#[derive(Clone, Debug, Serialize)]
pub struct StudentEval {
    pub clean: EvalReport,
    pub degraded: EvalReport,
    pub retrieval: f64,
}

pub fn evaluate_student(ckpt: &Checkpoint, data: &Datasets, cfg: &Resolved) -> vlcd_core::Result<StudentEval> {
    let p = &ckpt.params;
    Ok(StudentEval {
        clean: evaluate_five_splits(p, &data.finetune, &cfg.probe, cfg.seed)?,
        degraded: evaluate_five_splits(p, &data.degraded, &cfg.probe, cfg.seed)?,
        retrieval: retrieval_accuracy(p, &data.holdout)?,
    })
}

/// Mean total loss over the last epoch recorded in a JSONL step log.
pub fn final_epoch_loss(log: &Path) -> Result<f64, CliError> {
    let text = std::fs::read_to_string(log)?;
    let steps: Vec<StepRecord> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect::<Result<_, _>>()?;
    let last = steps.iter().map(|s| s.epoch).max().unwrap_or(0);
    let tail: Vec<f64> = steps.iter().filter(|s| s.epoch == last).map(|s| s.total).collect();
    Ok(tail.iter().sum::<f64>() / tail.len().max(1) as f64)
}
