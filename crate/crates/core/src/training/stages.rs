use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::checkpoint::Checkpoint;
use super::optim::{sgd_step, OptState};
use super::schedule::lr_at;
use super::{Stage, TrainConfig};
use crate::encoders::{EncoderParams, EncoderSpec};
use crate::error::{Error, Result};
use crate::losses::graph;
use crate::numerics::{Rng, Tape, Tensor, Var};
use crate::synthdata::{augment_rows, Dataset, DatasetKind};

/// One optimizer step as written to the JSONL loss log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub total: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_gnd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_dist: Option<f64>,
}

/// Per-epoch means of the step records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_gnd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_dist: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainOutcome {
    /// The step log, one JSON object per line.
    pub fn log_jsonl(&self) -> String {
        jsonl(&self.steps)
    }
}

fn jsonl(steps: &[StepRecord]) -> String {
    let mut out = String::new();
    for s in steps {
        out.push_str(&serde_json::to_string(s).expect("plain record"));
        out.push('\n');
    }
    out
}

/// Starting point for a student run.
#[derive(Clone, Copy, Debug)]
pub enum StudentInit<'a> {
    /// He-normal parameters from the run's `init/student` stream.
    Fresh,
    From(&'a Checkpoint),
}

#[derive(Clone, Copy)]
enum Objective {
    Vlcp,
    Predistill,
    Vlcd,
    Kd,
}

impl Objective {
    fn distill_key(self) -> Option<&'static str> {
        match self {
            Objective::Vlcp => None,
            Objective::Vlcd => Some("l_gnd"),
            Objective::Predistill | Objective::Kd => Some("l_dist"),
        }
    }
}

struct BatchLoss {
    total: Var,
    task: Option<Var>,
    distill: Option<Var>,
}

fn build_loss(
    tape: &mut Tape,
    objective: Objective,
    u_s: Var,
    u_t: Option<Var>,
    v: Option<Var>,
    cfg: &TrainConfig,
) -> Result<BatchLoss> {
    let params = cfg.loss_params();
    let need = |x: Option<Var>, what: &str| x.ok_or_else(|| Error::Contract(format!("missing {what}")));
    Ok(match objective {
        Objective::Vlcp => {
            let t = graph::vlcp(tape, u_s, need(v, "text features")?, cfg.tau, cfg.alpha)?;
            BatchLoss {
                total: t,
                task: Some(t),
                distill: None,
            }
        }
        Objective::Predistill => {
            let d = graph::feature_distill(tape, u_s, need(u_t, "teacher features")?)?;
            BatchLoss {
                total: tape.scale(d, cfg.lambda),
                task: None,
                distill: Some(d),
            }
        }
        Objective::Vlcd | Objective::Kd => {
            let (u_t, v) = (need(u_t, "teacher features")?, need(v, "text features")?);
            let c = if matches!(objective, Objective::Vlcd) {
                graph::vlcd_total(tape, u_s, u_t, v, &params)?
            } else {
                graph::kd_total(tape, u_s, u_t, v, &params)?
            };
            BatchLoss {
                total: c.total,
                task: Some(c.task),
                distill: Some(c.distill),
            }
        }
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Runs the epoch loop, updating `params` in place.
///
/// Shuffling and augmentation draw from `shuffle` and `augment` sub-streams of
/// `cfg.seed`, so runs that differ only in stage or lambda see identical batches.
fn train_loop(
    cfg: &TrainConfig,
    params: &mut EncoderParams,
    teacher: Option<&EncoderParams>,
    data: &Dataset,
    objective: Objective,
) -> Result<(Vec<StepRecord>, Vec<EpochRecord>)> {
    cfg.validate()?;
    let n = data.len();
    if n == 0 {
        return Err(Error::Contract("cannot train on an empty dataset".into()));
    }
    let text = match objective {
        Objective::Predistill => None,
        _ => Some(data.text()?),
    };
    let spe = cfg.steps_per_epoch(n);
    let mut shuffle_rng = Rng::substream(cfg.seed, "shuffle");
    let mut augment_rng = Rng::substream(cfg.seed, "augment");
    let mut opt = OptState::new(params.tensors());
    let mut steps = Vec::with_capacity(cfg.max_epochs * spe);
    let mut epochs = Vec::with_capacity(cfg.max_epochs);
    let key = objective.distill_key();

    for epoch in 0..cfg.max_epochs {
        let order = shuffle_rng.permutation(n);
        let first = steps.len();
        for batch in order.chunks(cfg.batch_size) {
            let x = augment_rows(&data.x.select_rows(batch), &cfg.augment, &mut augment_rng);
            let mut tape = Tape::new();
            let vars = params.register(&mut tape, true);
            let xv = tape.constant(x.clone());
            let u_s = params.forward_tape(&mut tape, &vars, xv)?;
            let u_t = match teacher {
                Some(t) => Some(tape.constant(t.forward(&x)?)),
                None => None,
            };
            let v = match text {
                Some(v) => Some(tape.constant(v.select_rows(batch))),
                None => None,
            };
            let loss = build_loss(&mut tape, objective, u_s, u_t, v, cfg)?;
            let total = tape.scalar(loss.total)?;
            if !total.is_finite() {
                return Err(Error::Contract(format!(
                    "{} loss became non-finite at step {}",
                    cfg.stage,
                    steps.len()
                )));
            }
            tape.backward(loss.total)?;
            let grads: Vec<Tensor> = vars.all().into_iter().map(|p| tape.grad(p)).collect();
            let step = opt.step;
            let lr = lr_at(cfg, step, spe);
            let mut ps = params.tensors_mut();
            sgd_step(&mut ps, &grads, &mut opt, lr, cfg.momentum, cfg.weight_decay)?;

            let task = loss.task.map(|t| tape.scalar(t)).transpose()?;
            let distill = loss.distill.map(|d| tape.scalar(d)).transpose()?;
            steps.push(StepRecord {
                step,
                epoch,
                lr,
                total,
                l_t: task,
                l_gnd: if key == Some("l_gnd") { distill } else { None },
                l_dist: if key == Some("l_dist") { distill } else { None },
            });
        }
        let slice = &steps[first..];
        let col = |f: fn(&StepRecord) -> Option<f64>| -> Option<f64> {
            let xs: Option<Vec<f64>> = slice.iter().map(f).collect();
            xs.map(|xs| mean(&xs))
        };
        epochs.push(EpochRecord {
            epoch,
            total: mean(&slice.iter().map(|s| s.total).collect::<Vec<_>>()),
            l_t: col(|s| s.l_t),
            l_gnd: col(|s| s.l_gnd),
            l_dist: col(|s| s.l_dist),
        });
    }
    Ok((steps, epochs))
}

fn finish(
    cfg: &TrainConfig,
    params: EncoderParams,
    data: &Dataset,
    init: String,
    steps: Vec<StepRecord>,
    epochs: Vec<EpochRecord>,
) -> Result<TrainOutcome> {
    let log = jsonl(&steps);
    let loss_digest = hex::encode(&Sha256::digest(log.as_bytes())[..8]);
    let config_json = serde_json::to_vec(cfg)?;
    let config_hash = hex::encode(&Sha256::digest(&config_json)[..8]);
    let mut checkpoint = Checkpoint::untrained(params, cfg.stage, cfg.seed);
    checkpoint.meta.config = Some(cfg.clone());
    checkpoint.meta.epoch = cfg.max_epochs;
    checkpoint.meta.loss_digest = loss_digest;
    checkpoint.meta.init = init;
    checkpoint.meta.data_hash = data.world_hash.clone();
    checkpoint.meta.config_hash = config_hash;
    checkpoint.refresh_descriptors();
    Ok(TrainOutcome {
        checkpoint,
        steps,
        epochs,
    })
}

fn expect_stage(cfg: &TrainConfig, stage: Stage) -> Result<()> {
    if cfg.stage != stage {
        return Err(Error::Contract(format!(
            "config is for stage {}, runner expects {stage}",
            cfg.stage
        )));
    }
    Ok(())
}

fn expect_teacher(teacher: &Checkpoint) -> Result<()> {
    if teacher.meta.stage != Stage::Teacher {
        return Err(Error::Contract(format!(
            "teacher checkpoint has stage {}, expected teacher",
            teacher.meta.stage
        )));
    }
    Ok(())
}

fn check_dims(spec: &EncoderSpec, data: &Dataset) -> Result<()> {
    if spec.input_dim != data.image_dim {
        return Err(Error::Contract(format!(
            "encoder '{}' takes {} inputs but the {} set has image dim {}",
            spec.name, spec.input_dim, data.kind, data.image_dim
        )));
    }
    Ok(())
}

/// Fresh student parameters drawn from the `init/student` stream of `seed`.
pub fn fresh_student(spec: &EncoderSpec, seed: u64) -> Result<EncoderParams> {
    EncoderParams::init(spec, &mut Rng::substream(seed, "init/student"))
}

fn resolve_init(spec: &EncoderSpec, init: StudentInit<'_>, seed: u64) -> Result<(EncoderParams, String)> {
    match init {
        StudentInit::Fresh => Ok((fresh_student(spec, seed)?, "fresh".into())),
        StudentInit::From(c) => {
            if c.params.spec.layer_dims() != spec.layer_dims() {
                return Err(Error::Contract(format!(
                    "initial checkpoint '{}' is not shape-compatible with student '{}'",
                    c.params.spec.name, spec.name
                )));
            }
            let mut p = c.params.clone();
            p.spec = spec.clone();
            Ok((p, format!("{}:{}", c.meta.stage, c.digest()?)))
        }
    }
}

/// Trains a teacher from scratch with the contrastive task loss only.
pub fn run_teacher_pretrain(cfg: &TrainConfig, spec: &EncoderSpec, data: &Dataset) -> Result<TrainOutcome> {
    expect_stage(cfg, Stage::Teacher)?;
    data.require_kind(&[DatasetKind::Pretrain])?;
    spec.validate_for_text_dim(data.text_dim)?;
    check_dims(spec, data)?;
    let mut params = EncoderParams::init(spec, &mut Rng::substream(cfg.seed, "init/teacher"))?;
    let (steps, epochs) = train_loop(cfg, &mut params, None, data, Objective::Vlcp)?;
    finish(cfg, params, data, "fresh".into(), steps, epochs)
}

/// Feature distillation toward a frozen teacher on unlabeled images,
/// minimizing `lambda * mean(1 - cos(u_t, u_s))`.
pub fn run_predistill(
    cfg: &TrainConfig,
    teacher: &Checkpoint,
    student: &EncoderSpec,
    data: &Dataset,
) -> Result<TrainOutcome> {
    expect_stage(cfg, Stage::Predistill)?;
    expect_teacher(teacher)?;
    data.require_kind(&[DatasetKind::Unlabeled])?;
    check_student(teacher, student, data)?;
    let mut params = fresh_student(student, cfg.seed)?;
    let (steps, epochs) = train_loop(cfg, &mut params, Some(&teacher.params), data, Objective::Predistill)?;
    finish(cfg, params, data, "fresh".into(), steps, epochs)
}

fn check_student(teacher: &Checkpoint, student: &EncoderSpec, data: &Dataset) -> Result<()> {
    student.validate()?;
    check_dims(student, data)?;
    check_dims(&teacher.params.spec, data)?;
    if student.output_dim != teacher.params.spec.output_dim {
        return Err(Error::Contract(format!(
            "student output dim {} differs from teacher output dim {}",
            student.output_dim, teacher.params.spec.output_dim
        )));
    }
    Ok(())
}

fn run_student(
    cfg: &TrainConfig,
    stage: Stage,
    objective: Objective,
    teacher: Option<&Checkpoint>,
    student: &EncoderSpec,
    init: StudentInit<'_>,
    data: &Dataset,
) -> Result<TrainOutcome> {
    expect_stage(cfg, stage)?;
    data.require_kind(&[DatasetKind::Pretrain])?;
    student.validate_for_text_dim(data.text_dim)?;
    if let Some(t) = teacher {
        expect_teacher(t)?;
        check_student(t, student, data)?;
    }
    check_dims(student, data)?;
    let (mut params, provenance) = resolve_init(student, init, cfg.seed)?;
    let (steps, epochs) = train_loop(cfg, &mut params, teacher.map(|t| &t.params), data, objective)?;
    finish(cfg, params, data, provenance, steps, epochs)
}

/// Student trained with `l_t + lambda * l_gnd` (text-anchored norm distillation).
pub fn run_vlcd(
    cfg: &TrainConfig,
    teacher: &Checkpoint,
    student: &EncoderSpec,
    init: StudentInit<'_>,
    data: &Dataset,
) -> Result<TrainOutcome> {
    run_student(cfg, Stage::Vlcd, Objective::Vlcd, Some(teacher), student, init, data)
}

/// Student trained with `l_t + lambda * mean(1 - cos(u_t, u_s))`.
pub fn run_kd_baseline(
    cfg: &TrainConfig,
    teacher: &Checkpoint,
    student: &EncoderSpec,
    init: StudentInit<'_>,
    data: &Dataset,
) -> Result<TrainOutcome> {
    run_student(cfg, Stage::KdBaseline, Objective::Kd, Some(teacher), student, init, data)
}

/// Student trained with the contrastive task loss alone.
pub fn run_no_kd(cfg: &TrainConfig, student: &EncoderSpec, init: StudentInit<'_>, data: &Dataset) -> Result<TrainOutcome> {
    run_student(cfg, Stage::NoKd, Objective::Vlcp, None, student, init, data)
}

/// Mean over rows of `cos(teacher(x_i), student(x_i))`.
pub fn mean_feature_cosine(student: &EncoderParams, teacher: &EncoderParams, x: &Tensor) -> Result<f64> {
    let us = student.forward(x)?;
    let ut = teacher.forward(x)?;
    if us.shape() != ut.shape() {
        return Err(Error::dim("mean_feature_cosine", us.shape(), ut.shape()));
    }
    let ns = us.row_norms();
    let nt = ut.row_norms();
    let mut acc = 0.0;
    for i in 0..us.rows() {
        let d: f64 = us.row(i).iter().zip(ut.row(i)).map(|(a, b)| a * b).sum();
        acc += d / (ns.data()[i] * nt.data()[i]).max(crate::numerics::NORM_FLOOR);
    }
    Ok(acc / us.rows() as f64)
}
