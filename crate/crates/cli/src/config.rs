use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vlcd_core::encoders::EncoderSpec;
use vlcd_core::evaluation::ProbeConfig;
use vlcd_core::synthdata::{AugmentConfig, WorldConfig};
use vlcd_core::training::{Stage, TrainConfig};

use crate::error::CliError;

/// Number of samples in each generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Sizes {
    pub pretrain: usize,
    pub unlabeled: usize,
    pub finetune: usize,
    pub degraded: usize,
    /// Held-out image-text pairs for retrieval accuracy.
    pub holdout: usize,
    /// Held-out unlabeled images for teacher/student cosine.
    pub unlabeled_holdout: usize,
}

impl Default for Sizes {
    fn default() -> Self {
        Self {
            pretrain: 2000,
            unlabeled: 10000,
            finetune: 1000,
            degraded: 50,
            holdout: 500,
            unlabeled_holdout: 1000,
        }
    }
}

/// Field-wise overrides of a stage's default hyperparameters. The seed is global.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_lr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_lr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub momentum: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warmup_epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub augment: Option<AugmentConfig>,
}

impl TrainOverrides {
    fn apply(&self, stage: Stage, seed: u64) -> TrainConfig {
        let d = TrainConfig::for_stage(stage);
        TrainConfig {
            stage,
            lambda: self.lambda.unwrap_or(d.lambda),
            alpha: self.alpha.unwrap_or(d.alpha),
            tau: self.tau.unwrap_or(d.tau),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            max_epochs: self.max_epochs.unwrap_or(d.max_epochs),
            initial_lr: self.initial_lr.unwrap_or(d.initial_lr),
            final_lr: self.final_lr.unwrap_or(d.final_lr),
            momentum: self.momentum.unwrap_or(d.momentum),
            weight_decay: self.weight_decay.unwrap_or(d.weight_decay),
            warmup_epochs: self.warmup_epochs.unwrap_or(d.warmup_epochs),
            seed,
            augment: self.augment.unwrap_or(d.augment),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub teacher: TrainOverrides,
    pub predistill: TrainOverrides,
    pub vlcd: TrainOverrides,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub batch_size: usize,
    pub repeats: usize,
    /// Minimum wall-clock time of one repeat.
    pub min_time_ms: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            repeats: 5,
            min_time_ms: 100,
        }
    }
}

/// The experiment file as written by the user. Every section is optional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub world: WorldConfig,
    pub sizes: Sizes,
    pub teacher: EncoderSpec,
    pub student: EncoderSpec,
    pub train: TrainSection,
    pub probe: ProbeConfig,
    pub bench: BenchConfig,
    pub lambdas: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            world: WorldConfig::default(),
            sizes: Sizes::default(),
            teacher: EncoderSpec::teacher_default(),
            student: EncoderSpec::student_default(),
            train: TrainSection::default(),
            probe: ProbeConfig::default(),
            bench: BenchConfig::default(),
            lambdas: vec![0.01, 0.1, 1.0, 10.0],
        }
    }
}

/// A validated configuration with the global seed pushed into every section.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Resolved {
    pub seed: u64,
    pub world: WorldConfig,
    pub sizes: Sizes,
    pub teacher: EncoderSpec,
    pub student: EncoderSpec,
    pub teacher_train: TrainConfig,
    pub predistill_train: TrainConfig,
    pub vlcd_train: TrainConfig,
    pub probe: ProbeConfig,
    pub bench: BenchConfig,
    pub lambdas: Vec<f64>,
}

fn invalid(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {msg}"))
}

impl ExperimentConfig {
    pub fn from_json(text: &str, origin: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("{origin}: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text, &path.display().to_string())
    }

    /// Checks cross-section consistency and fixes every seed to `self.seed`.
    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let seed = self.seed;
        if self.world.seed != 0 && self.world.seed != seed {
            return Err(invalid(
                "world.seed",
                format!("{} conflicts with the global seed {seed}; set only `seed`", self.world.seed),
            ));
        }
        let world = WorldConfig {
            seed,
            ..self.world.clone()
        };
        world.validate().map_err(|e| invalid("world", e))?;
        for (name, spec) in [("teacher", &self.teacher), ("student", &self.student)] {
            spec.validate_for_text_dim(world.text_dim).map_err(|e| invalid(name, e))?;
            if spec.input_dim != world.image_dim {
                return Err(invalid(
                    name,
                    format!("input_dim {} differs from world.image_dim {}", spec.input_dim, world.image_dim),
                ));
            }
        }
        let s = &self.sizes;
        for (name, n, min) in [
            ("sizes.pretrain", s.pretrain, 1),
            ("sizes.unlabeled", s.unlabeled, 1),
            ("sizes.finetune", s.finetune, 10),
            ("sizes.degraded", s.degraded, 10),
            ("sizes.holdout", s.holdout, 1),
            ("sizes.unlabeled_holdout", s.unlabeled_holdout, 1),
        ] {
            if n < min {
                return Err(invalid(name, format!("must be >= {min}, got {n}")));
            }
        }
        let teacher_train = self.train.teacher.apply(Stage::Teacher, seed);
        let predistill_train = self.train.predistill.apply(Stage::Predistill, seed);
        let vlcd_train = self.train.vlcd.apply(Stage::Vlcd, seed);
        for (name, c) in [
            ("train.teacher", &teacher_train),
            ("train.predistill", &predistill_train),
            ("train.vlcd", &vlcd_train),
        ] {
            c.validate().map_err(|e| invalid(name, e))?;
        }
        self.probe.validate().map_err(|e| invalid("probe", e))?;
        if self.bench.repeats < 3 || self.bench.batch_size == 0 {
            return Err(invalid("bench", "needs repeats >= 3 and batch_size >= 1"));
        }
        if self.lambdas.is_empty() {
            return Err(invalid("lambdas", "list must not be empty"));
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
            return Err(invalid("lambdas", format!("{l} is not a finite non-negative number")));
        }
        Ok(Resolved {
            seed,
            world,
            sizes: s.clone(),
            teacher: self.teacher.clone(),
            student: self.student.clone(),
            teacher_train,
            predistill_train,
            vlcd_train,
            probe: self.probe.clone(),
            bench: self.bench.clone(),
            lambdas: self.lambdas.clone(),
        })
    }
}

impl Resolved {
    /// Hex digest (16 chars) of the canonical JSON of the resolved configuration.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }

    pub fn snapshot(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

/// Parses a comma-separated list of lambdas.
pub fn parse_lambdas(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|p| {
            let p = p.trim();
            p.parse::<f64>()
                .map_err(|_| CliError::Config(format!("--lambdas: '{p}' is not a number")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let c = ExperimentConfig::from_json("{}", "test").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        let r = c.resolve().unwrap();
        assert_eq!(r.vlcd_train.lambda, 0.1);
        assert_eq!(r.vlcd_train.alpha, 0.5);
        assert_eq!(r.vlcd_train.tau, 0.1);
        assert_eq!(r.predistill_train.max_epochs, 1);
        assert_eq!(r.probe.c, 3.16);
    }

    #[test]
    fn unknown_keys_rejected_with_location() {
        let err = ExperimentConfig::from_json("{\n  \"sede\": 3\n}", "cfg.json").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("sede") && msg.contains("line 2"), "{msg}");
        assert!(ExperimentConfig::from_json(r#"{"train":{"vlcd":{"lamda":1}}}"#, "x").is_err());
    }

    #[test]
    fn seed_propagates_and_conflicts_fail() {
        let c = ExperimentConfig::from_json(r#"{"seed":7}"#, "x").unwrap();
        let r = c.resolve().unwrap();
        assert_eq!((r.world.seed, r.teacher_train.seed, r.vlcd_train.seed), (7, 7, 7));
        let c = ExperimentConfig::from_json(r#"{"seed":7,"world":{"seed":3}}"#, "x").unwrap();
        assert!(c.resolve().is_err());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let c = ExperimentConfig::from_json(r#"{"world":{"text_dim":32}}"#, "x").unwrap();
        assert!(matches!(c.resolve(), Err(CliError::Config(_))));
    }

    #[test]
    fn overrides_apply() {
        let c = ExperimentConfig::from_json(r#"{"train":{"vlcd":{"max_epochs":3,"warmup_epochs":1,"lambda":1.0}}}"#, "x").unwrap();
        let r = c.resolve().unwrap();
        assert_eq!((r.vlcd_train.max_epochs, r.vlcd_train.lambda), (3, 1.0));
        assert_eq!(r.teacher_train.max_epochs, TrainConfig::teacher().max_epochs);
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default().resolve().unwrap();
        let mut b = ExperimentConfig::default();
        b.seed = 1;
        assert_ne!(a.hash(), b.resolve().unwrap().hash());
        assert_eq!(a.hash(), ExperimentConfig::default().resolve().unwrap().hash());
    }

    #[test]
    fn lambda_list_parsing() {
        assert_eq!(parse_lambdas("0.01, 0.1,1,10").unwrap(), vec![0.01, 0.1, 1.0, 10.0]);
        assert!(parse_lambdas("0.1,x").is_err());
    }
}
