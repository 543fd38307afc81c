//! The fast invariant battery behind `vlcd verify`.
//!
//! Every check draws its random cases from named sub-streams, so a failing
//! case is reproducible from its seed alone.

use vlcd_core::encoders::{forward_on_tape, EncoderParams, EncoderSpec};
use vlcd_core::evaluation::auc_roc;
use vlcd_core::losses::{
    self, graph, BatchFeatures, ClassAnchors, FeatureSelect, LogitPair, LossParams,
};
use vlcd_core::numerics::gradcheck::{compare_with_numeric, finite_diff_check_many};
use vlcd_core::numerics::{Rng, Tape, Tensor, Var};
use vlcd_core::training::{
    sgd_step, Checkpoint, CheckpointError, OptState, Stage,
};

use crate::cli::Fault;

pub const GRAD_TOLERANCE: f64 = 1e-5;
pub const IDENTITY_TOLERANCE: f64 = 1e-12;
pub const LAMBDA_SWEEP: [f64; 4] = [0.01, 0.1, 1.0, 10.0];

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        }
    }

    pub fn line(&self) -> String {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        format!("{tag} {} ({})", self.name, self.detail)
    }
}

/// Objectives whose encoder-parameter gradients are checked.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradLoss {
    Vlcp,
    FeatureDistill,
    KlLogit,
    NormDistillClass,
    NormDistillText,
    VlcdTotal,
}

impl GradLoss {
    pub const ALL: [GradLoss; 6] = [
        GradLoss::Vlcp,
        GradLoss::FeatureDistill,
        GradLoss::KlLogit,
        GradLoss::NormDistillClass,
        GradLoss::NormDistillText,
        GradLoss::VlcdTotal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GradLoss::Vlcp => "vlcp_loss",
            GradLoss::FeatureDistill => "feature_distill_loss",
            GradLoss::KlLogit => "kl_logit_loss",
            GradLoss::NormDistillClass => "norm_distill_class",
            GradLoss::NormDistillText => "norm_distill_text",
            GradLoss::VlcdTotal => "vlcd_total",
        }
    }

    fn uses_gnd(self) -> bool {
        matches!(self, GradLoss::NormDistillText | GradLoss::VlcdTotal)
    }
}

/// One random gradient-check instance: a small student, frozen teacher
/// features and unit text features.
struct GradCase {
    student: EncoderParams,
    x: Tensor,
    u_t: Tensor,
    v: Tensor,
    class_ids: Vec<usize>,
    params: LossParams,
}

fn random_tensor(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).expect("shape")
}

impl GradCase {
    fn draw(loss: GradLoss, seed: u64) -> vlcd_core::Result<Self> {
        let mut rng = Rng::substream(seed, &format!("verify/grad/{}", loss.name()));
        let (d_in, d_out) = (5, 4);
        let n = 3 + rng.below(4);
        let mut student = EncoderParams::init(&EncoderSpec::new("s", d_in, vec![6], d_out), &mut rng)?;
        for layer in &mut student.layers {
            for b in layer.bias.data_mut() {
                *b = 0.1 * rng.normal();
            }
        }
        let x = random_tensor(&mut rng, n, d_in);
        let u_t = random_tensor(&mut rng, n, d_out);
        let v = random_tensor(&mut rng, n, d_out).normalize_rows("verify text")?;
        let class_ids = (0..n).map(|_| rng.below(3)).collect();
        let params = LossParams {
            tau: rng.uniform(0.1, 1.0),
            alpha: rng.uniform(0.0, 1.0),
            lambda: LAMBDA_SWEEP[(seed % 4) as usize],
        };
        Ok(Self {
            student,
            x,
            u_t,
            v,
            class_ids,
            params,
        })
    }

    fn thetas(&self) -> Vec<Tensor> {
        self.student.tensors().into_iter().cloned().collect()
    }

    /// The objective as a function of the student parameters. `gnd_sign`
    /// multiplies the grounding term and is `1` for the true objective.
    fn objective(&self, loss: GradLoss, tape: &mut Tape, vars: &[Var], gnd_sign: f64) -> vlcd_core::Result<Var> {
        let layers: Vec<(Var, Var)> = vars.chunks(2).map(|c| (c[0], c[1])).collect();
        let x = tape.constant(self.x.clone());
        let u_s = forward_on_tape(tape, &layers, x, self.student.spec.input_dim)?;
        let u_t = tape.constant(self.u_t.clone());
        let v = tape.constant(self.v.clone());
        let p = &self.params;
        match loss {
            GradLoss::Vlcp => graph::vlcp(tape, u_s, v, p.tau, p.alpha),
            GradLoss::FeatureDistill => graph::feature_distill(tape, u_s, u_t),
            GradLoss::KlLogit => graph::kl_logit(tape, u_t, u_s),
            GradLoss::NormDistillClass => {
                let anchors = ClassAnchors::from_teacher(&self.u_t, &self.class_ids)?;
                graph::norm_distill_class(tape, u_s, u_t, &anchors)
            }
            GradLoss::NormDistillText if gnd_sign == 1.0 => graph::norm_distill_text(tape, u_s, u_t, v),
            GradLoss::NormDistillText => {
                let g = graph::norm_distill_text(tape, u_s, u_t, v)?;
                Ok(tape.scale(g, gnd_sign))
            }
            GradLoss::VlcdTotal if gnd_sign == 1.0 => Ok(graph::vlcd_total(tape, u_s, u_t, v, p)?.total),
            GradLoss::VlcdTotal => {
                let task = graph::vlcp(tape, u_s, v, p.tau, p.alpha)?;
                let g = graph::norm_distill_text(tape, u_s, u_t, v)?;
                let g = tape.scale(g, gnd_sign * p.lambda);
                tape.add(task, g)
            }
        }
    }
}

/// Largest finite-difference discrepancy of one seeded case.
pub fn gradient_case(loss: GradLoss, seed: u64, fault: Option<Fault>) -> vlcd_core::Result<f64> {
    let case = GradCase::draw(loss, seed)?;
    let thetas = case.thetas();
    let mut truth = |tape: &mut Tape, vars: &[Var]| case.objective(loss, tape, vars, 1.0);
    let report = if fault == Some(Fault::GndSign) && loss.uses_gnd() {
        let mut tape = Tape::new();
        let vars: Vec<Var> = thetas.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = case.objective(loss, &mut tape, &vars, -1.0)?;
        tape.backward(out)?;
        let analytic = vars.iter().map(|&v| tape.grad(v)).collect();
        compare_with_numeric(&mut truth, &thetas, analytic)?
    } else {
        finite_diff_check_many(truth, &thetas)?
    };
    Ok(report.max_discrepancy)
}

/// Runs `cases` seeded gradient checks of `loss` and reports the worst one.
pub fn gradient_check(loss: GradLoss, cases: usize, fault: Option<Fault>) -> CheckResult {
    let name = format!("gradient/{}", loss.name());
    let mut worst = (0.0f64, 0u64);
    for seed in 0..cases as u64 {
        match gradient_case(loss, seed, fault) {
            Ok(d) if d.is_finite() => {
                if d > worst.0 {
                    worst = (d, seed);
                }
            }
            Ok(d) => return CheckResult::new(&name, false, format!("seed {seed}: discrepancy {d}")),
            Err(e) => return CheckResult::new(&name, false, format!("seed {seed}: {e}")),
        }
    }
    CheckResult::new(
        &name,
        cases > 0 && worst.0 <= GRAD_TOLERANCE,
        format!("{cases} cases, max discrepancy {:.3e} at seed {}", worst.0, worst.1),
    )
}

/// All-pairs AUC: positives beating negatives, ties counted half.
pub fn brute_force_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// A random scored instance with both classes present and frequent ties.
pub fn auc_instance(seed: u64) -> (Vec<f64>, Vec<u8>) {
    let mut rng = Rng::substream(seed, "verify/auc");
    let n = 2 + rng.below(40);
    let levels = 1 + rng.below(8);
    let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.next_f64() < 0.4)).collect();
    labels[0] = 1;
    labels[1] = 0;
    let scores = (0..n).map(|_| rng.below(levels) as f64 * 0.25 - 0.5).collect();
    (scores, labels)
}

pub fn auc_check(instances: usize) -> CheckResult {
    let mut worst = 0.0f64;
    for seed in 0..instances as u64 {
        let (scores, labels) = auc_instance(seed);
        let fast = match auc_roc(&scores, &labels) {
            Ok(a) => a,
            Err(e) => return CheckResult::new("auc/oracle", false, format!("seed {seed}: {e}")),
        };
        worst = worst.max((fast - brute_force_auc(&scores, &labels)).abs());
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() + 1.0).collect();
        if auc_roc(&warped, &labels).ok() != Some(fast) {
            return CheckResult::new("auc/oracle", false, format!("seed {seed}: monotone transform changed the AUC"));
        }
    }
    CheckResult::new(
        "auc/oracle",
        worst <= IDENTITY_TOLERANCE,
        format!("{instances} instances, max deviation {worst:.3e}"),
    )
}

fn identity_batch(seed: u64, n: usize) -> vlcd_core::Result<BatchFeatures> {
    let mut rng = Rng::substream(seed, "verify/identity");
    let u_s = random_tensor(&mut rng, n, 6);
    let u_t = random_tensor(&mut rng, n, 6);
    let v = random_tensor(&mut rng, n, 6).normalize_rows("verify text")?;
    BatchFeatures::new(u_s, u_t, v)
}

/// Each failing identity is returned as a message.
pub fn loss_identity_failures(cases: usize) -> vlcd_core::Result<Vec<String>> {
    let mut failures = Vec::new();
    let mut fail = |cond: bool, msg: String| {
        if !cond {
            failures.push(msg);
        }
    };
    for seed in 0..cases as u64 {
        let one = identity_batch(seed, 1)?;
        let p = LossParams::default();
        let l = losses::vlcp_loss(&one, &p, FeatureSelect::Student)?.total;
        fail(l == 0.0, format!("seed {seed}: single-pair contrastive loss {l}"));

        let b = identity_batch(seed, 7)?;
        let swapped = BatchFeatures::new(b.v.clone(), b.u_t.clone(), b.u_s.clone())?;
        let half = LossParams { alpha: 0.5, ..p };
        let a = losses::vlcp_loss(&b, &half, FeatureSelect::Student)?.total;
        let c = losses::vlcp_loss(&swapped, &half, FeatureSelect::Student)?.total;
        fail((a - c).abs() <= IDENTITY_TOLERANCE, format!("seed {seed}: exchange asymmetry {}", (a - c).abs()));

        let kl = losses::kl_logit_loss(&LogitPair {
            p_t: b.u_t.clone(),
            p_s: b.u_s.clone(),
        })?
        .total;
        fail(kl >= 0.0, format!("seed {seed}: negative KL {kl}"));
        let shifted = b.u_t.map(|z| z + 2.5);
        let kl0 = losses::kl_logit_loss(&LogitPair {
            p_t: b.u_t.clone(),
            p_s: shifted,
        })?
        .total;
        fail(kl0.abs() <= IDENTITY_TOLERANCE, format!("seed {seed}: KL at shifted logits {kl0}"));

        let terms = losses::norm_distill_text_terms(&b)?;
        fail(
            terms.iter().all(|t| (-1.0..=1.0).contains(t)),
            format!("seed {seed}: grounding term outside [-1, 1]"),
        );

        let n = b.len();
        let singleton = ClassAnchors {
            labels: (0..n).collect(),
            anchors: b.v.normalize_rows("anchor")?,
            members: (0..n).map(|j| vec![j]).collect(),
            means: b.v.clone(),
        };
        let with_ids = b.clone().with_class_ids((0..n).collect())?;
        let class = losses::norm_distill_class(&with_ids, &singleton)?.total;
        let text = losses::norm_distill_text(&b)?.total;
        fail(
            (class - text).abs() <= IDENTITY_TOLERANCE,
            format!("seed {seed}: singleton class vs text gap {}", (class - text).abs()),
        );

        for lambda in LAMBDA_SWEEP {
            let q = LossParams { lambda, ..p };
            let out = losses::vlcd_total(&b, &q)?;
            let l_t = out.get("l_t").unwrap_or(f64::NAN);
            let l_gnd = out.get("l_gnd").unwrap_or(f64::NAN);
            let gap = (out.total - (l_t + lambda * l_gnd)).abs();
            fail(gap <= IDENTITY_TOLERANCE, format!("seed {seed}: lambda {lambda} composition gap {gap}"));
        }
    }
    Ok(failures)
}

pub fn loss_identity_check(cases: usize) -> CheckResult {
    match loss_identity_failures(cases) {
        Ok(f) if f.is_empty() => CheckResult::new("loss/identities", true, format!("{cases} cases")),
        Ok(f) => CheckResult::new("loss/identities", false, f.join("; ")),
        Err(e) => CheckResult::new("loss/identities", false, e.to_string()),
    }
}

pub fn checkpoint_check() -> CheckResult {
    let run = || -> Result<Option<String>, vlcd_core::Error> {
        let spec = EncoderSpec::new("probe", 4, vec![3], 2);
        let params = EncoderParams::init(&spec, &mut Rng::substream(0, "verify/checkpoint"))?;
        let ckpt = Checkpoint::untrained(params, Stage::Vlcd, 0);
        let bytes = ckpt.to_bytes()?;
        let again = Checkpoint::from_bytes(&bytes)?.to_bytes()?;
        if again != bytes {
            return Ok(Some("save-load-save changed bytes".into()));
        }
        let mut bad = bytes.clone();
        bad[0] ^= 0xff;
        if !matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::BadMagic(_))) {
            return Ok(Some("bad magic accepted".into()));
        }
        if !matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]), Err(CheckpointError::Truncated { .. })) {
            return Ok(Some("truncated file accepted".into()));
        }
        Ok(None)
    };
    match run() {
        Ok(None) => CheckResult::new("checkpoint/roundtrip", true, "bit-identical, corruption rejected"),
        Ok(Some(msg)) => CheckResult::new("checkpoint/roundtrip", false, msg),
        Err(e) => CheckResult::new("checkpoint/roundtrip", false, e.to_string()),
    }
}

/// Momentum SGD on a constant gradient against the unrolled recurrence.
pub fn sgd_check() -> CheckResult {
    let (lr, m, wd) = (0.1, 0.9, 0.01);
    let mut p = Tensor::scalar(1.0);
    let g = Tensor::scalar(0.5);
    let mut state = OptState::new([&p]);
    let (mut ep, mut eb) = (1.0f64, 0.0f64);
    for step in 0..10 {
        if let Err(e) = sgd_step(&mut [&mut p], std::slice::from_ref(&g), &mut state, lr, m, wd) {
            return CheckResult::new("optim/sgd", false, e.to_string());
        }
        eb = m * eb + 0.5 + wd * ep;
        ep -= lr * eb;
        let got = p.data()[0];
        if (got - ep).abs() > IDENTITY_TOLERANCE {
            return CheckResult::new("optim/sgd", false, format!("step {step}: {got} vs {ep}"));
        }
    }
    CheckResult::new("optim/sgd", true, "10 steps match the recurrence")
}

/// The whole battery in a fixed order.
pub fn run_battery(cases: usize, fault: Option<Fault>) -> Vec<CheckResult> {
    let mut out: Vec<CheckResult> = GradLoss::ALL.iter().map(|&l| gradient_check(l, cases, fault)).collect();
    out.push(auc_check(200));
    out.push(loss_identity_check(cases));
    out.push(checkpoint_check());
    out.push(sgd_check());
    out
}
