//! Seeded synthetic datasets.
//!
//! A [`World`] holds the latent structure every dataset is drawn from:
//! concept prototypes in image space, attribute mixing directions, and the
//! text-side concept and attribute directions. A sample picks a concept and
//! a standard-normal attribute vector, then renders
//!
//! ```text
//! x = prototype[k] + sum_t a_t * attr_dir[t] + noise_std * eps
//! v = normalize(text_concept[k] + text_attribute_weight * sum_t a_t * text_attr[t] + text_noise * eps')
//! ```
//!
//! Text features are stored already normalized. The unlabeled corpus uses a
//! separate prototype set, checked to be far from the paired-data prototypes.
//! The degraded set applies a fixed affine distortion and stronger noise.
//! Binary task labels threshold fixed linear scores of the attributes.

mod io;
mod split;

pub use io::{BlockDescriptor, DatasetManifest, DATASET_FORMAT_VERSION};
pub use split::{split_random, split_random_where, Split};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::tensor::{dot, l2_norm};
use crate::numerics::{Rng, Tensor};

/// Number of binary downstream tasks.
pub const TASK_COUNT: usize = 5;

/// Tasks labeled in the degraded-capture set.
pub const DEGRADED_TASKS: [usize; 2] = [2, 3];

/// Target positive rate of each task and the matching standard-normal upper quantile.
const TASK_POSITIVE_RATES: [f64; TASK_COUNT] = [0.30, 0.40, 0.50, 0.35, 0.25];
const TASK_THRESHOLDS: [f64; TASK_COUNT] = [
    0.524_400_512_708_041,
    0.253_347_103_135_800,
    0.0,
    0.385_320_466_407_568,
    0.674_489_750_196_082,
];

const MAX_GENERATION_ATTEMPTS: u32 = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    /// Concepts in the paired (pretraining / fine-tuning) data.
    pub concepts: usize,
    /// Concepts in the unlabeled out-of-distribution corpus.
    pub unlabeled_concepts: usize,
    pub image_dim: usize,
    pub text_dim: usize,
    pub attributes: usize,
    /// Per-coordinate standard deviation of concept prototypes.
    pub prototype_std: f64,
    /// Norm of each attribute's image-space direction.
    pub attribute_strength: f64,
    pub noise_std: f64,
    pub degraded_noise_std: f64,
    /// Multiplicative part of the degraded-capture distortion.
    pub degraded_gain: f64,
    /// Per-coordinate std of the degraded-capture offset.
    pub degraded_offset_std: f64,
    pub text_attribute_weight: f64,
    pub text_noise: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            concepts: 32,
            unlabeled_concepts: 32,
            image_dim: 64,
            text_dim: 64,
            attributes: 5,
            prototype_std: 1.0,
            attribute_strength: 1.5,
            noise_std: 1.0,
            degraded_noise_std: 1.5,
            degraded_gain: 0.7,
            degraded_offset_std: 0.5,
            text_attribute_weight: 0.6,
            text_noise: 0.05,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Contract(m));
        if self.concepts < 2 || self.concepts > 255 {
            return bad(format!("concepts must be in 2..=255, got {}", self.concepts));
        }
        if self.unlabeled_concepts < 1 {
            return bad("unlabeled_concepts must be >= 1".into());
        }
        if self.image_dim == 0 || self.text_dim == 0 {
            return bad("image_dim and text_dim must be >= 1".into());
        }
        if self.attributes < TASK_COUNT {
            return bad(format!("attributes must be >= {TASK_COUNT}, got {}", self.attributes));
        }
        if !(self.degraded_noise_std > self.noise_std) {
            return bad(format!(
                "degraded_noise_std ({}) must exceed noise_std ({})",
                self.degraded_noise_std, self.noise_std
            ));
        }
        for (name, v) in [
            ("prototype_std", self.prototype_std),
            ("attribute_strength", self.attribute_strength),
            ("noise_std", self.noise_std),
            ("degraded_offset_std", self.degraded_offset_std),
            ("text_attribute_weight", self.text_attribute_weight),
            ("text_noise", self.text_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite non-negative number"));
            }
        }
        if !(self.degraded_gain > 0.0 && self.degraded_gain.is_finite()) {
            return bad("degraded_gain must be positive".into());
        }
        Ok(())
    }

    /// Hex digest (16 chars) of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        short_hash(&bytes)
    }
}

pub(crate) fn short_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    hex::encode(&digest[..8])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Pretrain,
    Unlabeled,
    Finetune,
    Degraded,
}

impl DatasetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::Pretrain => "pretrain",
            DatasetKind::Unlabeled => "unlabeled",
            DatasetKind::Finetune => "finetune",
            DatasetKind::Degraded => "degraded",
        }
    }
}

impl std::fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One generated sample.
#[derive(Clone, Debug)]
pub struct Sample {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub concept: usize,
    pub attributes: Vec<f64>,
    pub labels: [u8; TASK_COUNT],
}

/// A generated dataset held in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub kind: DatasetKind,
    pub world_hash: String,
    pub seed: u64,
    /// Name of the random sub-stream the samples came from.
    pub stream: String,
    pub image_dim: usize,
    pub text_dim: usize,
    /// `n x image_dim`
    pub x: Tensor,
    /// `n x text_dim`, unit rows.
    pub v: Option<Tensor>,
    pub concepts: Option<Vec<u8>>,
    /// `n x attributes`
    pub attributes: Option<Tensor>,
    /// Task ids of the label columns.
    pub tasks: Vec<usize>,
    /// Row-major `n x tasks.len()` binary labels.
    pub labels: Option<Vec<u8>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    /// Labels of one task, by task id.
    pub fn task_labels(&self, task: usize) -> Result<Vec<u8>> {
        let col = self
            .tasks
            .iter()
            .position(|&t| t == task)
            .ok_or_else(|| Error::Contract(format!("task {task} is not labeled in this {} set", self.kind)))?;
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| Error::Contract("dataset has no labels".into()))?;
        let t = self.tasks.len();
        Ok((0..self.len()).map(|i| labels[i * t + col]).collect())
    }

    pub fn text(&self) -> Result<&Tensor> {
        self.v
            .as_ref()
            .ok_or_else(|| Error::Contract(format!("{} set has no text features", self.kind)))
    }

    pub fn require_kind(&self, kinds: &[DatasetKind]) -> Result<()> {
        if kinds.contains(&self.kind) {
            Ok(())
        } else {
            Err(Error::Contract(format!(
                "expected a {} dataset, got {}",
                kinds.iter().map(|k| k.as_str()).collect::<Vec<_>>().join(" or "),
                self.kind
            )))
        }
    }
}

/// Feature-space augmentation settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    pub noise_std: f64,
    /// Multiply by a uniform factor in `[0.95, 1.05]`.
    pub scale_jitter: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            noise_std: 0.1,
            scale_jitter: true,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self {
            noise_std: 0.0,
            scale_jitter: false,
        }
    }
}

/// Adds Gaussian noise, then applies a random global scale in `[0.95, 1.05]`.
pub fn augment(x: &[f64], cfg: &AugmentConfig, rng: &mut Rng) -> Vec<f64> {
    let mut out: Vec<f64> = if cfg.noise_std > 0.0 {
        x.iter().map(|&v| v + rng.gaussian(0.0, cfg.noise_std)).collect()
    } else {
        x.to_vec()
    };
    if cfg.scale_jitter {
        let s = rng.uniform(0.95, 1.05);
        out.iter_mut().for_each(|v| *v *= s);
    }
    out
}

/// Augments every row of a batch.
pub fn augment_rows(x: &Tensor, cfg: &AugmentConfig, rng: &mut Rng) -> Tensor {
    if cfg.noise_std == 0.0 && !cfg.scale_jitter {
        return x.clone();
    }
    let mut out = Tensor::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let a = augment(x.row(r), cfg, rng);
        out.row_mut(r).copy_from_slice(&a);
    }
    out
}

/// Latent structure shared by all datasets of a configuration.
#[derive(Clone, Debug)]
pub struct World {
    pub cfg: WorldConfig,
    hash: String,
    /// `K x image_dim`
    pub prototypes: Tensor,
    /// `K_u x image_dim`
    pub unlabeled_prototypes: Tensor,
    /// `m x image_dim`
    pub attribute_dirs: Tensor,
    /// Sign (+1 or -1) with which attributes enter the images of each
    /// paired-data concept; balanced across concepts.
    pub concept_signs: Vec<f64>,
    /// The same for the unlabeled-corpus concepts.
    pub unlabeled_signs: Vec<f64>,
    /// `K x text_dim`, unit rows.
    pub text_concepts: Tensor,
    /// `m x text_dim`, unit rows.
    pub text_attributes: Tensor,
    /// `1 x image_dim`
    pub degraded_offset: Tensor,
    /// Attribute weights of each task score, `TASK_COUNT x m`, unit rows.
    pub task_weights: Tensor,
}

fn gaussian_matrix(rows: usize, cols: usize, std: f64, rng: &mut Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gaussian(0.0, std)).collect();
    Tensor::new(rows, cols, data).expect("sized")
}

fn unit_rows(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Tensor {
    let mut t = gaussian_matrix(rows, cols, 1.0, rng);
    for r in 0..rows {
        let n = l2_norm(t.row(r)).max(f64::MIN_POSITIVE);
        t.row_mut(r).iter_mut().for_each(|v| *v *= scale / n);
    }
    t
}

/// `n` signs, half +1 and half -1 (the extra one +1 when `n` is odd), in random order.
fn balanced_signs(n: usize, rng: &mut Rng) -> Vec<f64> {
    let mut s: Vec<f64> = (0..n).map(|i| if i < n.div_ceil(2) { 1.0 } else { -1.0 }).collect();
    rng.shuffle(&mut s);
    s
}

fn min_cross_distance(a: &Tensor, b: &Tensor) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            let d: f64 = a
                .row(i)
                .iter()
                .zip(b.row(j))
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            best = best.min(d);
        }
    }
    best
}

impl World {
    pub fn new(cfg: &WorldConfig) -> Result<Self> {
        cfg.validate()?;
        let seed = cfg.seed;
        let (d, m) = (cfg.image_dim, cfg.attributes);
        let prototypes = gaussian_matrix(
            cfg.concepts,
            d,
            cfg.prototype_std,
            &mut Rng::substream(seed, "world/prototypes"),
        );
        let attribute_dirs = unit_rows(m, d, cfg.attribute_strength, &mut Rng::substream(seed, "world/attributes"));
        let text_concepts = unit_rows(cfg.concepts, cfg.text_dim, 1.0, &mut Rng::substream(seed, "world/text-concepts"));
        let text_attributes = unit_rows(m, cfg.text_dim, 1.0, &mut Rng::substream(seed, "world/text-attributes"));
        let degraded_offset = gaussian_matrix(
            1,
            d,
            cfg.degraded_offset_std,
            &mut Rng::substream(seed, "world/degraded-offset"),
        );

        let concept_signs = balanced_signs(cfg.concepts, &mut Rng::substream(seed, "world/concept-signs"));
        let unlabeled_signs =
            balanced_signs(cfg.unlabeled_concepts, &mut Rng::substream(seed, "world/unlabeled-signs"));

        let mut task_weights = Tensor::zeros(TASK_COUNT, m);
        let w = 1.0 / 1.25f64.sqrt();
        for t in 0..TASK_COUNT {
            task_weights.set(t, t, w);
            task_weights.set(t, (t + 1) % m, 0.5 * w);
        }

        // Out-of-distribution prototypes, redrawn from a shifted stream until
        // they keep their distance from the paired-data prototypes.
        let threshold = Self::separation_threshold(cfg);
        let mut unlabeled_prototypes = None;
        for attempt in 0..MAX_GENERATION_ATTEMPTS {
            let cand = gaussian_matrix(
                cfg.unlabeled_concepts,
                d,
                cfg.prototype_std,
                &mut Rng::substream(seed, &format!("world/unlabeled-prototypes/{attempt}")),
            );
            if min_cross_distance(&cand, &prototypes) > threshold {
                unlabeled_prototypes = Some(cand);
                break;
            }
        }
        let unlabeled_prototypes = unlabeled_prototypes.ok_or_else(|| {
            Error::Generation("could not draw unlabeled prototypes disjoint from pretraining prototypes".into())
        })?;

        Ok(Self {
            cfg: cfg.clone(),
            hash: cfg.hash(),
            prototypes,
            unlabeled_prototypes,
            attribute_dirs,
            concept_signs,
            unlabeled_signs,
            text_concepts,
            text_attributes,
            degraded_offset,
            task_weights,
        })
    }

    /// Minimum allowed distance between paired-data and unlabeled prototypes:
    /// a quarter of the expected distance between two independent prototypes.
    pub fn separation_threshold(cfg: &WorldConfig) -> f64 {
        0.25 * cfg.prototype_std * (2.0 * cfg.image_dim as f64).sqrt()
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn min_prototype_separation(&self) -> f64 {
        min_cross_distance(&self.unlabeled_prototypes, &self.prototypes)
    }

    /// Noise-free image of `(concept, attributes)` in the paired-data space.
    pub fn clean_image(&self, concept: usize, attributes: &[f64]) -> Vec<f64> {
        let mut x = self.prototypes.row(concept).to_vec();
        let sign = self.concept_signs[concept];
        for (t, &a) in attributes.iter().enumerate() {
            let a = sign * a;
            for (xi, &di) in x.iter_mut().zip(self.attribute_dirs.row(t)) {
                *xi += a * di;
            }
        }
        x
    }

    pub fn text_feature(&self, concept: usize, attributes: &[f64], rng: &mut Rng) -> Vec<f64> {
        let mut v = self.text_concepts.row(concept).to_vec();
        let beta = self.cfg.text_attribute_weight;
        for (t, &a) in attributes.iter().enumerate() {
            for (vi, &bi) in v.iter_mut().zip(self.text_attributes.row(t)) {
                *vi += beta * a * bi;
            }
        }
        if self.cfg.text_noise > 0.0 {
            v.iter_mut().for_each(|vi| *vi += rng.gaussian(0.0, self.cfg.text_noise));
        }
        let n = l2_norm(&v);
        if n == 0.0 {
            v[0] = 1.0;
        } else {
            v.iter_mut().for_each(|vi| *vi /= n);
        }
        v
    }

    pub fn task_scores(&self, attributes: &[f64]) -> [f64; TASK_COUNT] {
        let mut s = [0.0; TASK_COUNT];
        for (t, si) in s.iter_mut().enumerate() {
            *si = dot(self.task_weights.row(t), attributes);
        }
        s
    }

    pub fn task_labels(&self, attributes: &[f64]) -> [u8; TASK_COUNT] {
        let s = self.task_scores(attributes);
        let mut l = [0u8; TASK_COUNT];
        for t in 0..TASK_COUNT {
            l[t] = u8::from(s[t] > TASK_THRESHOLDS[t]);
        }
        l
    }

    /// Applies the fixed degraded-capture distortion to an image.
    pub fn distort(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.degraded_offset.data())
            .map(|(&xi, &oi)| self.cfg.degraded_gain * xi + oi)
            .collect()
    }

    /// Mean squared residual between an image and the noise-free rendering of its latents.
    pub fn reconstruction_error(&self, x: &[f64], concept: usize, attributes: &[f64]) -> f64 {
        let clean = self.clean_image(concept, attributes);
        clean.iter().zip(x).map(|(c, v)| (c - v) * (c - v)).sum::<f64>() / x.len() as f64
    }

    fn sample(&self, rng: &mut Rng, noise_std: f64, degraded: bool) -> Sample {
        let concept = rng.below(self.cfg.concepts);
        let attributes: Vec<f64> = (0..self.cfg.attributes).map(|_| rng.normal()).collect();
        let mut x = self.clean_image(concept, &attributes);
        if degraded {
            x = self.distort(&x);
        }
        for xi in x.iter_mut() {
            *xi += rng.gaussian(0.0, noise_std);
        }
        let v = self.text_feature(concept, &attributes, rng);
        let labels = self.task_labels(&attributes);
        Sample {
            x,
            v,
            concept,
            attributes,
            labels,
        }
    }

    fn assemble(
        &self,
        kind: DatasetKind,
        stream: &str,
        samples: &[Sample],
        tasks: &[usize],
    ) -> Dataset {
        let n = samples.len();
        let mut x = Tensor::zeros(n, self.cfg.image_dim);
        let mut v = Tensor::zeros(n, self.cfg.text_dim);
        let mut attrs = Tensor::zeros(n, self.cfg.attributes);
        let mut labels = Vec::with_capacity(n * tasks.len());
        for (i, s) in samples.iter().enumerate() {
            x.row_mut(i).copy_from_slice(&s.x);
            v.row_mut(i).copy_from_slice(&s.v);
            attrs.row_mut(i).copy_from_slice(&s.attributes);
            labels.extend(tasks.iter().map(|&t| s.labels[t]));
        }
        Dataset {
            kind,
            world_hash: self.hash.clone(),
            seed: self.cfg.seed,
            stream: stream.to_string(),
            image_dim: self.cfg.image_dim,
            text_dim: self.cfg.text_dim,
            x,
            v: Some(v),
            concepts: Some(samples.iter().map(|s| s.concept as u8).collect()),
            attributes: Some(attrs),
            tasks: tasks.to_vec(),
            labels: if tasks.is_empty() { None } else { Some(labels) },
        }
    }

    /// Image-text pairs drawn from the named sub-stream.
    pub fn pretrain_pairs(&self, n: usize, stream: &str) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::Contract("pretrain set needs n >= 1".into()));
        }
        let mut rng = Rng::substream(self.cfg.seed, stream);
        let samples: Vec<Sample> = (0..n).map(|_| self.sample(&mut rng, self.cfg.noise_std, false)).collect();
        Ok(self.assemble(DatasetKind::Pretrain, stream, &samples, &[]))
    }

    /// Images from the out-of-distribution prototypes; no text, no labels.
    pub fn unlabeled_corpus(&self, n: usize, stream: &str) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::Contract("unlabeled corpus needs n >= 1".into()));
        }
        let mut rng = Rng::substream(self.cfg.seed, stream);
        let d = self.cfg.image_dim;
        let mut x = Tensor::zeros(n, d);
        for i in 0..n {
            let j = rng.below(self.cfg.unlabeled_concepts);
            let row = x.row_mut(i);
            row.copy_from_slice(self.unlabeled_prototypes.row(j));
            for t in 0..self.cfg.attributes {
                let a = self.unlabeled_signs[j] * rng.normal();
                for (xi, &di) in row.iter_mut().zip(self.attribute_dirs.row(t)) {
                    *xi += a * di;
                }
            }
            for xi in row.iter_mut() {
                *xi += rng.gaussian(0.0, self.cfg.noise_std);
            }
        }
        Ok(Dataset {
            kind: DatasetKind::Unlabeled,
            world_hash: self.hash.clone(),
            seed: self.cfg.seed,
            stream: stream.to_string(),
            image_dim: d,
            text_dim: self.cfg.text_dim,
            x,
            v: None,
            concepts: None,
            attributes: None,
            tasks: Vec::new(),
            labels: None,
        })
    }

    fn labeled(&self, n: usize, stream: &str, kind: DatasetKind, tasks: &[usize]) -> Result<Dataset> {
        if n < 10 {
            return Err(Error::Contract(format!("{kind} set needs n >= 10, got {n}")));
        }
        let (noise, degraded) = match kind {
            DatasetKind::Degraded => (self.cfg.degraded_noise_std, true),
            _ => (self.cfg.noise_std, false),
        };
        for attempt in 0..MAX_GENERATION_ATTEMPTS {
            let name = if attempt == 0 {
                stream.to_string()
            } else {
                format!("{stream}/retry{attempt}")
            };
            let mut rng = Rng::substream(self.cfg.seed, &name);
            let samples: Vec<Sample> = (0..n).map(|_| self.sample(&mut rng, noise, degraded)).collect();
            let calibrated = tasks.iter().all(|&t| {
                let pos = samples.iter().filter(|s| s.labels[t] == 1).count() as f64 / n as f64;
                (0.2..=0.8).contains(&pos)
            });
            if calibrated {
                return Ok(self.assemble(kind, &name, &samples, tasks));
            }
        }
        Err(Error::Generation(format!(
            "positive rates of {kind} labels left [0.2, 0.8] after {MAX_GENERATION_ATTEMPTS} attempts"
        )))
    }

    /// Images with all five binary task labels.
    pub fn finetune_labeled(&self, n: usize, stream: &str) -> Result<Dataset> {
        let tasks: Vec<usize> = (0..TASK_COUNT).collect();
        self.labeled(n, stream, DatasetKind::Finetune, &tasks)
    }

    /// Distorted, noisier images with two of the five tasks labeled.
    pub fn degraded_set(&self, n: usize, stream: &str) -> Result<Dataset> {
        self.labeled(n, stream, DatasetKind::Degraded, &DEGRADED_TASKS)
    }
}

/// Default sub-stream names.
pub mod streams {
    pub const PRETRAIN: &str = "data/pretrain";
    pub const UNLABELED: &str = "data/unlabeled";
    pub const FINETUNE: &str = "data/finetune";
    pub const DEGRADED: &str = "data/degraded";
    pub const HOLDOUT: &str = "data/holdout";
    pub const UNLABELED_HOLDOUT: &str = "data/unlabeled-holdout";
}

pub fn gen_pretrain_pairs(cfg: &WorldConfig, n: usize) -> Result<Dataset> {
    World::new(cfg)?.pretrain_pairs(n, streams::PRETRAIN)
}

pub fn gen_unlabeled_corpus(cfg: &WorldConfig, n: usize) -> Result<Dataset> {
    World::new(cfg)?.unlabeled_corpus(n, streams::UNLABELED)
}

pub fn gen_finetune_labeled(cfg: &WorldConfig, n: usize) -> Result<Dataset> {
    World::new(cfg)?.finetune_labeled(n, streams::FINETUNE)
}

pub fn gen_degraded_set(cfg: &WorldConfig, n: usize) -> Result<Dataset> {
    World::new(cfg)?.degraded_set(n, streams::DEGRADED)
}

/// Positive rate each task is calibrated toward.
pub fn task_positive_rate(task: usize) -> f64 {
    TASK_POSITIVE_RATES[task]
}
