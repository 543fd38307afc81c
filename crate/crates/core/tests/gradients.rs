//! Encoder-parameter gradients of every objective against central differences.

use vlcd_core::encoders::{forward_on_tape, EncoderParams, EncoderSpec};
use vlcd_core::losses::{graph, ClassAnchors, LossParams};
use vlcd_core::numerics::gradcheck::{compare_with_numeric, finite_diff_check_many};
use vlcd_core::numerics::{Rng, Tape, Tensor, Var};

const CASES: u64 = 100;
const TOL: f64 = 1e-5;
const LAMBDAS: [f64; 4] = [0.01, 0.1, 1.0, 10.0];

struct Case {
    student: EncoderParams,
    x: Tensor,
    u_t: Tensor,
    v: Tensor,
    classes: Vec<usize>,
    params: LossParams,
}

fn gaussian(rng: &mut Rng, r: usize, c: usize, scale: f64) -> Tensor {
    Tensor::new(r, c, (0..r * c).map(|_| scale * rng.normal()).collect()).unwrap()
}

fn case(name: &str, seed: u64) -> Case {
    let mut rng = Rng::substream(seed, &format!("test/grad/{name}"));
    let n = 2 + rng.below(6);
    let d = 3 + rng.below(3);
    let spec = EncoderSpec::new("s", 4, vec![5, 6], d);
    let mut student = EncoderParams::init(&spec, &mut rng).unwrap();
    for l in &mut student.layers {
        for b in l.bias.data_mut() {
            *b = 0.2 * rng.normal();
        }
    }
    let x = gaussian(&mut rng, n, 4, 1.0);
    let u_t = gaussian(&mut rng, n, d, 1.5);
    let v = gaussian(&mut rng, n, d, 1.0).normalize_rows("v").unwrap();
    let k = 1 + rng.below(n);
    let classes = (0..n).map(|j| if j < k { j } else { rng.below(k) }).collect();
    let params = LossParams {
        tau: rng.uniform(0.05, 1.0),
        alpha: rng.next_f64(),
        lambda: LAMBDAS[rng.below(4)],
    };
    Case {
        student,
        x,
        u_t,
        v,
        classes,
        params,
    }
}

/// Student features on the tape from parameter handles `[w0, b0, w1, b1, ...]`.
fn student_features(c: &Case, tape: &mut Tape, vars: &[Var]) -> Var {
    let layers: Vec<(Var, Var)> = vars.chunks(2).map(|p| (p[0], p[1])).collect();
    let x = tape.constant(c.x.clone());
    forward_on_tape(tape, &layers, x, 4).unwrap()
}

fn worst_over_seeds(name: &str, loss: impl Fn(&Case, &mut Tape, Var) -> vlcd_core::Result<Var>) {
    let mut worst = 0.0f64;
    for seed in 0..CASES {
        let c = case(name, seed);
        let thetas: Vec<Tensor> = c.student.tensors().into_iter().cloned().collect();
        let report = finite_diff_check_many(
            |tape, vars| {
                let u_s = student_features(&c, tape, vars);
                loss(&c, tape, u_s)
            },
            &thetas,
        )
        .unwrap();
        assert!(
            report.passes(TOL),
            "{name} seed {seed}: discrepancy {} at {:?}",
            report.max_discrepancy,
            report.worst
        );
        worst = worst.max(report.max_discrepancy);
    }
    eprintln!("{name}: worst discrepancy {worst:.3e} over {CASES} cases");
}

#[test]
fn vlcp_gradients() {
    worst_over_seeds("vlcp", |c, tape, u_s| {
        let v = tape.constant(c.v.clone());
        graph::vlcp(tape, u_s, v, c.params.tau, c.params.alpha)
    });
}

#[test]
fn feature_distill_gradients() {
    worst_over_seeds("feature_distill", |c, tape, u_s| {
        let u_t = tape.constant(c.u_t.clone());
        graph::feature_distill(tape, u_s, u_t)
    });
}

#[test]
fn kl_logit_gradients() {
    worst_over_seeds("kl_logit", |c, tape, u_s| {
        let p_t = tape.constant(c.u_t.clone());
        graph::kl_logit(tape, p_t, u_s)
    });
}

#[test]
fn norm_distill_class_gradients() {
    worst_over_seeds("norm_distill_class", |c, tape, u_s| {
        let u_t = tape.constant(c.u_t.clone());
        let anchors = ClassAnchors::from_teacher(&c.u_t, &c.classes)?;
        graph::norm_distill_class(tape, u_s, u_t, &anchors)
    });
}

#[test]
fn norm_distill_text_gradients() {
    worst_over_seeds("norm_distill_text", |c, tape, u_s| {
        let u_t = tape.constant(c.u_t.clone());
        let v = tape.constant(c.v.clone());
        graph::norm_distill_text(tape, u_s, u_t, v)
    });
}

#[test]
fn vlcd_total_gradients() {
    worst_over_seeds("vlcd_total", |c, tape, u_s| {
        let u_t = tape.constant(c.u_t.clone());
        let v = tape.constant(c.v.clone());
        Ok(graph::vlcd_total(tape, u_s, u_t, v, &c.params)?.total)
    });
}

#[test]
fn negated_grounding_gradient_is_detected() {
    let c = case("canary", 0);
    let thetas: Vec<Tensor> = c.student.tensors().into_iter().cloned().collect();
    let build = |tape: &mut Tape, vars: &[Var], sign: f64| {
        let u_s = student_features(&c, tape, vars);
        let u_t = tape.constant(c.u_t.clone());
        let v = tape.constant(c.v.clone());
        let g = graph::norm_distill_text(tape, u_s, u_t, v)?;
        Ok(tape.scale(g, sign))
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = thetas.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars, -1.0).unwrap();
    tape.backward(out).unwrap();
    let wrong = vars.iter().map(|&v| tape.grad(v)).collect();
    let mut truth = |tape: &mut Tape, vars: &[Var]| build(tape, vars, 1.0);
    let report = compare_with_numeric(&mut truth, &thetas, wrong).unwrap();
    assert!(!report.passes(TOL));
}
