//! Teacher pretraining, unsupervised predistillation and distillation runs.

pub mod checkpoint;
mod optim;
mod schedule;
mod stages;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, CheckpointMeta, TensorDescriptor,
};
pub use optim::{sgd_step, OptState};
pub use schedule::lr_at;
pub use stages::{
    fresh_student, mean_feature_cosine, run_kd_baseline, run_no_kd, run_predistill, run_teacher_pretrain, run_vlcd,
    EpochRecord, StepRecord, StudentInit, TrainOutcome,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossParams;
use crate::synthdata::AugmentConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Teacher,
    Predistill,
    Vlcd,
    KdBaseline,
    NoKd,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Teacher => "teacher",
            Stage::Predistill => "predistill",
            Stage::Vlcd => "vlcd",
            Stage::KdBaseline => "kd-baseline",
            Stage::NoKd => "no-kd",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Hyperparameters of one training stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: Stage,
    pub lambda: f64,
    pub alpha: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub initial_lr: f64,
    pub final_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub seed: u64,
    pub augment: AugmentConfig,
}

/// Desk-scale epoch budget for the contrastive stages.
pub const DESK_EPOCHS: usize = 50;

impl TrainConfig {
    fn base(stage: Stage) -> Self {
        Self {
            stage,
            lambda: 0.1,
            alpha: 0.5,
            tau: 0.1,
            batch_size: 32,
            max_epochs: DESK_EPOCHS,
            initial_lr: 0.1,
            final_lr: 0.0,
            momentum: 0.9,
            weight_decay: 4e-5,
            warmup_epochs: 5,
            seed: 0,
            augment: AugmentConfig::default(),
        }
    }

    pub fn teacher() -> Self {
        Self::base(Stage::Teacher)
    }

    /// One epoch of cosine decay without warmup.
    pub fn predistill() -> Self {
        Self {
            max_epochs: 1,
            warmup_epochs: 0,
            ..Self::base(Stage::Predistill)
        }
    }

    pub fn vlcd() -> Self {
        Self::base(Stage::Vlcd)
    }

    pub fn kd_baseline() -> Self {
        Self::base(Stage::KdBaseline)
    }

    pub fn no_kd() -> Self {
        Self::base(Stage::NoKd)
    }

    pub fn for_stage(stage: Stage) -> Self {
        match stage {
            Stage::Teacher => Self::teacher(),
            Stage::Predistill => Self::predistill(),
            Stage::Vlcd => Self::vlcd(),
            Stage::KdBaseline => Self::kd_baseline(),
            Stage::NoKd => Self::no_kd(),
        }
    }

    pub fn loss_params(&self) -> LossParams {
        LossParams {
            tau: self.tau,
            alpha: self.alpha,
            lambda: self.lambda,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss_params().validate()?;
        let bad = |m: &str| Err(Error::Contract(format!("{} config: {m}", self.stage)));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be >= 1");
        }
        if self.warmup_epochs > self.max_epochs {
            return bad("warmup_epochs exceeds max_epochs");
        }
        if !(self.initial_lr >= 0.0 && self.final_lr >= 0.0) {
            return bad("learning rates must be >= 0");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be >= 0");
        }
        if !(self.augment.noise_std >= 0.0) {
            return bad("augment noise must be >= 0");
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }
}
