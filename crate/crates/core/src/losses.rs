//! Training objectives.
//!
//! * contrastive image/text loss with temperature `tau`, mixed over the two
//!   retrieval directions by `alpha`;
//! * feature distillation, `1 - cos(u_t, u_s)` averaged over the batch;
//! * KL distillation between teacher and student logits;
//! * norm distillation against class anchors (mean teacher direction per class);
//! * text-anchored norm distillation, where each sample's anchor is its own
//!   text feature projected to the unit sphere;
//! * the combined objective `l_t + lambda * l_gnd`.
//!
//! The functions in [`graph`] build the losses on a [`Tape`] so gradients can
//! flow to encoder parameters. The top-level functions evaluate the same
//! graphs on plain tensors and return a [`LossOutput`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor};

/// Temperature, direction weight and distillation weight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    pub tau: f64,
    pub alpha: f64,
    pub lambda: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            tau: 0.1,
            alpha: 0.5,
            lambda: 0.1,
        }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Contract(format!("tau must be positive, got {}", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Contract(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Contract(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// Which axis the contrastive softmax normalizes over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// For image `i`, candidates are all texts in the batch.
    TextToImage,
    /// For text `i`, candidates are all images in the batch.
    ImageToText,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureSelect {
    Student,
    Teacher,
}

/// Aligned per-batch features.
#[derive(Clone, Debug)]
pub struct BatchFeatures {
    pub u_s: Tensor,
    pub u_t: Tensor,
    pub v: Tensor,
    pub class_ids: Option<Vec<usize>>,
    /// Dataset indices the rows were drawn from.
    pub x_ref: Vec<usize>,
}

impl BatchFeatures {
    pub fn new(u_s: Tensor, u_t: Tensor, v: Tensor) -> Result<Self> {
        if u_s.shape() != u_t.shape() {
            return Err(Error::dim("batch features (u_s vs u_t)", u_s.shape(), u_t.shape()));
        }
        if u_s.shape() != v.shape() {
            return Err(Error::dim("batch features (u_s vs v)", u_s.shape(), v.shape()));
        }
        if u_s.rows() == 0 {
            return Err(Error::Contract("empty batch".into()));
        }
        let x_ref = (0..u_s.rows()).collect();
        Ok(Self {
            u_s,
            u_t,
            v,
            class_ids: None,
            x_ref,
        })
    }

    pub fn with_class_ids(mut self, ids: Vec<usize>) -> Result<Self> {
        if ids.len() != self.u_s.rows() {
            return Err(Error::Contract(format!(
                "{} class ids for a batch of {}",
                ids.len(),
                self.u_s.rows()
            )));
        }
        self.class_ids = Some(ids);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.u_s.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.u_s.rows() == 0
    }

    /// Confirms every text row has unit norm within `tol`.
    pub fn check_text_normalized(&self, tol: f64) -> Result<()> {
        for (r, n) in self.v.row_norms().data().iter().enumerate() {
            if (n - 1.0).abs() > tol {
                return Err(Error::Contract(format!("text row {r} has norm {n}")));
            }
        }
        Ok(())
    }

    fn image(&self, which: FeatureSelect) -> &Tensor {
        match which {
            FeatureSelect::Student => &self.u_s,
            FeatureSelect::Teacher => &self.u_t,
        }
    }
}

/// Class anchors built from teacher features: `e_k` is the unit mean teacher feature of class `k`.
#[derive(Clone, Debug)]
pub struct ClassAnchors {
    /// Class label of each anchor row.
    pub labels: Vec<usize>,
    /// `K x d`, unit rows.
    pub anchors: Tensor,
    /// Sample indices belonging to each class.
    pub members: Vec<Vec<usize>>,
    /// Unnormalized class means, `K x d`.
    pub means: Tensor,
}

impl ClassAnchors {
    pub fn from_teacher(u_t: &Tensor, class_ids: &[usize]) -> Result<Self> {
        if class_ids.len() != u_t.rows() {
            return Err(Error::Contract(format!(
                "{} class ids for {} teacher rows",
                class_ids.len(),
                u_t.rows()
            )));
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (j, &k) in class_ids.iter().enumerate() {
            groups.entry(k).or_default().push(j);
        }
        let d = u_t.cols();
        let mut labels = Vec::with_capacity(groups.len());
        let mut members = Vec::with_capacity(groups.len());
        let mut means = Tensor::zeros(groups.len(), d);
        for (row, (k, idx)) in groups.into_iter().enumerate() {
            for &j in &idx {
                for (m, &x) in means.row_mut(row).iter_mut().zip(u_t.row(j)) {
                    *m += x;
                }
            }
            let n = idx.len() as f64;
            means.row_mut(row).iter_mut().for_each(|m| *m /= n);
            labels.push(k);
            members.push(idx);
        }
        let anchors = means.normalize_rows("class anchor")?;
        Ok(Self {
            labels,
            anchors,
            members,
            means,
        })
    }

    /// Rejects anchor sets whose member lists do not partition `0..n` or contain an empty class.
    pub fn validate_partition(&self, n: usize) -> Result<()> {
        if self.members.len() != self.anchors.rows() {
            return Err(Error::Contract("anchor count differs from class count".into()));
        }
        let mut seen = vec![false; n];
        for (k, set) in self.members.iter().enumerate() {
            if set.is_empty() {
                return Err(Error::Contract(format!("class {k} has an empty index set")));
            }
            for &j in set {
                if j >= n || seen[j] {
                    return Err(Error::Contract(format!(
                        "class index sets do not partition 0..{n} (index {j})"
                    )));
                }
                seen[j] = true;
            }
        }
        if let Some(j) = seen.iter().position(|s| !s) {
            return Err(Error::Contract(format!("sample {j} belongs to no class")));
        }
        Ok(())
    }

    /// Per-sample anchor rows and `1/|I_k|` weights.
    fn expand(&self, n: usize) -> (Tensor, Tensor) {
        let d = self.anchors.cols();
        let mut rows = Tensor::zeros(n, d);
        let mut weights = Tensor::zeros(n, 1);
        for (k, set) in self.members.iter().enumerate() {
            let w = 1.0 / set.len() as f64;
            for &j in set {
                rows.row_mut(j).copy_from_slice(self.anchors.row(k));
                weights.set(j, 0, w);
            }
        }
        (rows, weights)
    }
}

/// Teacher and student logits over the same classes.
#[derive(Clone, Debug)]
pub struct LogitPair {
    pub p_t: Tensor,
    pub p_s: Tensor,
}

/// A scalar objective with its named components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossOutput {
    pub total: f64,
    pub breakdown: BTreeMap<String, f64>,
}

impl LossOutput {
    fn single(name: &str, value: f64) -> Self {
        Self {
            total: value,
            breakdown: BTreeMap::from([(name.to_string(), value)]),
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.breakdown.get(name).copied()
    }
}

/// Projects each row onto the unit sphere.
pub fn unit_sphere_anchor(v: &Tensor) -> Result<Tensor> {
    v.normalize_rows("unit_sphere_anchor")
}

/// Tape builders for every objective. Inputs that should not receive
/// gradients (teacher features, text features) are expected to be constants.
pub mod graph {
    use super::*;
    use crate::numerics::Var;

    fn require_nonzero(tape: &Tape, v: Var, what: &'static str) -> Result<()> {
        match tape.value(v).first_zero_row() {
            Some(row) => Err(Error::ZeroNorm { what, row }),
            None => Ok(()),
        }
    }

    fn require_same_shape(tape: &Tape, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (tape.value(a).shape(), tape.value(b).shape());
        if sa != sb {
            return Err(Error::dim(op, sa, sb));
        }
        Ok(())
    }

    pub fn contrastive_directional(
        tape: &mut Tape,
        u: Var,
        v: Var,
        tau: f64,
        direction: Direction,
    ) -> Result<Var> {
        require_same_shape(tape, "contrastive", u, v)?;
        if !(tau > 0.0) {
            return Err(Error::Contract(format!("tau must be positive, got {tau}")));
        }
        let sim = tape.cosine_matrix(u, v)?;
        let logits = tape.scale(sim, 1.0 / tau);
        let logits = match direction {
            Direction::TextToImage => logits,
            Direction::ImageToText => tape.transpose(logits),
        };
        let logp = tape.log_softmax_rows(logits)?;
        let pos = tape.diag(logp)?;
        let m = tape.mean(pos);
        Ok(tape.scale(m, -1.0))
    }

    /// `alpha * l(x->t) + (1 - alpha) * l(t->x)`.
    pub fn vlcp(tape: &mut Tape, u: Var, v: Var, tau: f64, alpha: f64) -> Result<Var> {
        let x2t = contrastive_directional(tape, u, v, tau, Direction::ImageToText)?;
        let t2x = contrastive_directional(tape, u, v, tau, Direction::TextToImage)?;
        let a = tape.scale(x2t, alpha);
        let b = tape.scale(t2x, 1.0 - alpha);
        tape.add(a, b)
    }

    /// Mean of `1 - cos(u_t_i, u_s_i)`.
    pub fn feature_distill(tape: &mut Tape, u_s: Var, u_t: Var) -> Result<Var> {
        require_same_shape(tape, "feature_distill", u_s, u_t)?;
        require_nonzero(tape, u_s, "feature_distill(u_s)")?;
        require_nonzero(tape, u_t, "feature_distill(u_t)")?;
        let ns = tape.normalize_rows(u_s)?;
        let nt = tape.normalize_rows(u_t)?;
        let cos = tape.row_dot(nt, ns)?;
        let m = tape.mean(cos);
        let neg = tape.scale(m, -1.0);
        Ok(tape.offset(neg, 1.0))
    }

    /// Mean over samples of `KL(softmax(p_t) || softmax(p_s))`.
    pub fn kl_logit(tape: &mut Tape, p_t: Var, p_s: Var) -> Result<Var> {
        require_same_shape(tape, "kl_logit", p_t, p_s)?;
        let n = tape.value(p_t).rows() as f64;
        let lt = tape.log_softmax_rows(p_t)?;
        let ls = tape.log_softmax_rows(p_s)?;
        let pt = tape.softmax_rows(p_t)?;
        let diff = tape.sub(lt, ls)?;
        let prod = tape.mul(pt, diff)?;
        let s = tape.sum(prod);
        Ok(tape.scale(s, 1.0 / n))
    }

    /// `-(1/N) * sum_j w_j * (u_s_j . a_j) / max(|u_s_j|, |u_t_j|)` for per-sample
    /// unit anchors `a_j` (`N x d` constant) and weights `w_j` (`N x 1` constant).
    pub fn norm_distill_anchored(
        tape: &mut Tape,
        u_s: Var,
        u_t: Var,
        anchors: Var,
        weights: Var,
    ) -> Result<Var> {
        require_same_shape(tape, "norm_distill", u_s, u_t)?;
        require_same_shape(tape, "norm_distill", u_s, anchors)?;
        require_nonzero(tape, u_s, "norm_distill(u_s)")?;
        require_nonzero(tape, u_t, "norm_distill(u_t)")?;
        let n = tape.value(u_s).rows() as f64;
        let num = tape.row_dot(u_s, anchors)?;
        let ns = tape.row_norm(u_s);
        let nt = tape.row_norm(u_t);
        let den = tape.max(ns, nt)?;
        let ratio = tape.div(num, den)?;
        let weighted = tape.mul(ratio, weights)?;
        let s = tape.sum(weighted);
        Ok(tape.scale(s, -1.0 / n))
    }

    pub fn norm_distill_class(
        tape: &mut Tape,
        u_s: Var,
        u_t: Var,
        anchors: &ClassAnchors,
    ) -> Result<Var> {
        let n = tape.value(u_s).rows();
        anchors.validate_partition(n)?;
        let (rows, weights) = anchors.expand(n);
        let a = tape.constant(rows);
        let w = tape.constant(weights);
        norm_distill_anchored(tape, u_s, u_t, a, w)
    }

    /// Text-anchored variant: each sample is its own class with anchor `v_j / |v_j|`.
    pub fn norm_distill_text(tape: &mut Tape, u_s: Var, u_t: Var, v: Var) -> Result<Var> {
        require_nonzero(tape, v, "norm_distill_text(v)")?;
        let anchors = tape.normalize_rows(v)?;
        let n = tape.value(u_s).rows();
        let w = tape.constant(Tensor::ones(n, 1));
        norm_distill_anchored(tape, u_s, u_t, anchors, w)
    }

    /// Handles of a combined objective and its two components.
    #[derive(Clone, Copy, Debug)]
    pub struct Combined {
        pub total: Var,
        pub task: Var,
        pub distill: Var,
    }

    /// `l_t(u_s, v) + lambda * l_gnd(u_s, u_t, v)`.
    pub fn vlcd_total(tape: &mut Tape, u_s: Var, u_t: Var, v: Var, params: &LossParams) -> Result<Combined> {
        params.validate()?;
        let task = vlcp(tape, u_s, v, params.tau, params.alpha)?;
        let distill = norm_distill_text(tape, u_s, u_t, v)?;
        let weighted = tape.scale(distill, params.lambda);
        let total = tape.add(task, weighted)?;
        Ok(Combined { total, task, distill })
    }

    /// `l_t(u_s, v) + lambda * l_dist(u_s, u_t)`: the unanchored distillation baseline.
    pub fn kd_total(tape: &mut Tape, u_s: Var, u_t: Var, v: Var, params: &LossParams) -> Result<Combined> {
        params.validate()?;
        let task = vlcp(tape, u_s, v, params.tau, params.alpha)?;
        let distill = feature_distill(tape, u_s, u_t)?;
        let weighted = tape.scale(distill, params.lambda);
        let total = tape.add(task, weighted)?;
        Ok(Combined { total, task, distill })
    }
}

pub fn contrastive_directional(u: &Tensor, v: &Tensor, tau: f64, direction: Direction) -> Result<f64> {
    let mut tape = Tape::new();
    let (uu, vv) = (tape.constant(u.clone()), tape.constant(v.clone()));
    let out = graph::contrastive_directional(&mut tape, uu, vv, tau, direction)?;
    tape.scalar(out)
}

pub fn vlcp_loss(batch: &BatchFeatures, params: &LossParams, which: FeatureSelect) -> Result<LossOutput> {
    params.validate()?;
    let mut tape = Tape::new();
    let u = tape.constant(batch.image(which).clone());
    let v = tape.constant(batch.v.clone());
    let out = graph::vlcp(&mut tape, u, v, params.tau, params.alpha)?;
    Ok(LossOutput::single("l_t", tape.scalar(out)?))
}

pub fn feature_distill_loss(batch: &BatchFeatures) -> Result<LossOutput> {
    let mut tape = Tape::new();
    let s = tape.constant(batch.u_s.clone());
    let t = tape.constant(batch.u_t.clone());
    let out = graph::feature_distill(&mut tape, s, t)?;
    Ok(LossOutput::single("l_dist", tape.scalar(out)?))
}

pub fn kl_logit_loss(pair: &LogitPair) -> Result<LossOutput> {
    let mut tape = Tape::new();
    let t = tape.constant(pair.p_t.clone());
    let s = tape.constant(pair.p_s.clone());
    let out = graph::kl_logit(&mut tape, t, s)?;
    Ok(LossOutput::single("l_kl", tape.scalar(out)?))
}

pub fn norm_distill_class(batch: &BatchFeatures, anchors: &ClassAnchors) -> Result<LossOutput> {
    if batch.class_ids.is_none() {
        return Err(Error::Contract("class-anchored norm distillation needs class ids".into()));
    }
    let mut tape = Tape::new();
    let s = tape.constant(batch.u_s.clone());
    let t = tape.constant(batch.u_t.clone());
    let out = graph::norm_distill_class(&mut tape, s, t, anchors)?;
    Ok(LossOutput::single("l_nd", tape.scalar(out)?))
}

pub fn norm_distill_text(batch: &BatchFeatures) -> Result<LossOutput> {
    let mut tape = Tape::new();
    let s = tape.constant(batch.u_s.clone());
    let t = tape.constant(batch.u_t.clone());
    let v = tape.constant(batch.v.clone());
    let out = graph::norm_distill_text(&mut tape, s, t, v)?;
    Ok(LossOutput::single("l_gnd", tape.scalar(out)?))
}

/// Per-sample terms `u_s_j . a_j / max(|u_s_j|, |u_t_j|)` of the text-anchored loss.
pub fn norm_distill_text_terms(batch: &BatchFeatures) -> Result<Vec<f64>> {
    let anchors = unit_sphere_anchor(&batch.v)?;
    let ns = batch.u_s.row_norms();
    let nt = batch.u_t.row_norms();
    (0..batch.len())
        .map(|j| {
            let den = ns.get(j, 0).max(nt.get(j, 0));
            if den == 0.0 {
                return Err(Error::ZeroNorm {
                    what: "norm_distill_text",
                    row: j,
                });
            }
            Ok(crate::numerics::tensor::dot(batch.u_s.row(j), anchors.row(j)) / den)
        })
        .collect()
}

fn combined_output(params: &LossParams, batch: &BatchFeatures, kd: bool) -> Result<LossOutput> {
    let mut tape = Tape::new();
    let s = tape.constant(batch.u_s.clone());
    let t = tape.constant(batch.u_t.clone());
    let v = tape.constant(batch.v.clone());
    let c = if kd {
        graph::kd_total(&mut tape, s, t, v, params)?
    } else {
        graph::vlcd_total(&mut tape, s, t, v, params)?
    };
    let name = if kd { "l_dist" } else { "l_gnd" };
    Ok(LossOutput {
        total: tape.scalar(c.total)?,
        breakdown: BTreeMap::from([
            ("l_t".to_string(), tape.scalar(c.task)?),
            (name.to_string(), tape.scalar(c.distill)?),
        ]),
    })
}

pub fn vlcd_total(batch: &BatchFeatures, params: &LossParams) -> Result<LossOutput> {
    combined_output(params, batch, false)
}

pub fn kd_total(batch: &BatchFeatures, params: &LossParams) -> Result<LossOutput> {
    combined_output(params, batch, true)
}
