//! Multilayer-perceptron image encoders with parameter and FLOP accounting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Rng, Tape, Tensor, Var};

pub const DEFAULT_INPUT_DIM: usize = 64;
pub const DEFAULT_FEATURE_DIM: usize = 64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

/// Layer widths of an encoder. ReLU follows every layer except the last.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSpec {
    pub name: String,
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl EncoderSpec {
    pub fn new(name: impl Into<String>, input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Self {
        Self {
            name: name.into(),
            input_dim,
            hidden,
            output_dim,
            activation: Activation::Relu,
        }
    }

    pub fn teacher_default() -> Self {
        Self::new("teacher", DEFAULT_INPUT_DIM, vec![128, 128, 128], DEFAULT_FEATURE_DIM)
    }

    pub fn student_default() -> Self {
        Self::new("student", DEFAULT_INPUT_DIM, vec![64, 64], DEFAULT_FEATURE_DIM)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Contract(format!(
                "encoder '{}' has a zero width",
                self.name
            )));
        }
        Ok(())
    }

    /// Checks that the encoder emits features of the text dimension.
    pub fn validate_for_text_dim(&self, text_dim: usize) -> Result<()> {
        self.validate()?;
        if self.output_dim != text_dim {
            return Err(Error::Contract(format!(
                "encoder '{}' output dim {} differs from text feature dim {}",
                self.name, self.output_dim, text_dim
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of each linear layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let widths: Vec<usize> = std::iter::once(self.input_dim)
            .chain(self.hidden.iter().copied())
            .chain(std::iter::once(self.output_dim))
            .collect();
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn count_params(&self) -> usize {
        self.layer_dims().iter().map(|&(i, o)| i * o + o).sum()
    }

    /// Multiply-adds count as two FLOPs; activations and biases are ignored.
    pub fn estimate_flops(&self, batch: usize) -> u64 {
        let per_sample: u64 = self
            .layer_dims()
            .iter()
            .map(|&(i, o)| 2 * i as u64 * o as u64)
            .sum();
        batch as u64 * per_sample
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `fan_in x fan_out`
    pub weight: Tensor,
    /// `1 x fan_out`
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub spec: EncoderSpec,
    pub layers: Vec<Linear>,
}

/// Tape handles for the weights and biases of an encoder.
#[derive(Clone, Debug)]
pub struct EncoderVars {
    pub layers: Vec<(Var, Var)>,
}

impl EncoderVars {
    pub fn all(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }
}

impl EncoderParams {
    /// He-normal weights (std `sqrt(2 / fan_in)`), zero biases.
    pub fn init(spec: &EncoderSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layer_dims()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let std = (2.0 / fan_in as f64).sqrt();
                let data = (0..fan_in * fan_out).map(|_| rng.gaussian(0.0, std)).collect();
                Linear {
                    weight: Tensor::new(fan_in, fan_out, data).expect("sized"),
                    bias: Tensor::zeros(1, fan_out),
                }
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            layers,
        })
    }

    pub fn zeros(spec: &EncoderSpec) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layer_dims()
            .into_iter()
            .map(|(i, o)| Linear {
                weight: Tensor::zeros(i, o),
                bias: Tensor::zeros(1, o),
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            layers,
        })
    }

    /// Rebuilds parameters from tensors ordered `w0, b0, w1, b1, ...`, checking the shape chain.
    pub fn from_tensors(spec: &EncoderSpec, tensors: Vec<Tensor>) -> Result<Self> {
        spec.validate()?;
        let dims = spec.layer_dims();
        if tensors.len() != 2 * dims.len() {
            return Err(Error::Contract(format!(
                "expected {} tensors for encoder '{}', got {}",
                2 * dims.len(),
                spec.name,
                tensors.len()
            )));
        }
        let mut it = tensors.into_iter();
        let mut layers = Vec::with_capacity(dims.len());
        for (i, o) in dims {
            let weight = it.next().expect("counted");
            let bias = it.next().expect("counted");
            if weight.shape() != (i, o) {
                return Err(Error::dim("encoder weight", weight.shape(), (i, o)));
            }
            if bias.shape() != (1, o) {
                return Err(Error::dim("encoder bias", bias.shape(), (1, o)));
            }
            layers.push(Linear { weight, bias });
        }
        Ok(Self {
            spec: spec.clone(),
            layers,
        })
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn into_tensors(self) -> Vec<Tensor> {
        self.layers.into_iter().flat_map(|l| [l.weight, l.bias]).collect()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Batch forward pass without recording gradients.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.spec.input_dim {
            return Err(Error::dim("encoder forward", x.shape(), (x.rows(), self.spec.input_dim)));
        }
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut next = h.matmul(&layer.weight)?;
            let bias = layer.bias.data();
            for r in 0..next.rows() {
                for (v, b) in next.row_mut(r).iter_mut().zip(bias) {
                    *v += b;
                    if i != last && *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            h = next;
        }
        Ok(h)
    }

    /// Places the parameters on `tape`; `trainable = false` records them as constants.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> EncoderVars {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                if trainable {
                    (tape.leaf(l.weight.clone()), tape.leaf(l.bias.clone()))
                } else {
                    (tape.constant(l.weight.clone()), tape.constant(l.bias.clone()))
                }
            })
            .collect();
        EncoderVars { layers }
    }

    pub fn forward_tape(&self, tape: &mut Tape, vars: &EncoderVars, x: Var) -> Result<Var> {
        forward_on_tape(tape, &vars.layers, x, self.spec.input_dim)
    }
}

/// Differentiable forward pass through linear layers given as `(weight, bias)` handles.
pub fn forward_on_tape(tape: &mut Tape, layers: &[(Var, Var)], x: Var, input_dim: usize) -> Result<Var> {
    let xs = tape.value(x).shape();
    if xs.1 != input_dim {
        return Err(Error::dim("encoder forward", xs, (xs.0, input_dim)));
    }
    let last = layers.len().saturating_sub(1);
    let mut h = x;
    for (i, &(w, b)) in layers.iter().enumerate() {
        let z = tape.matmul(h, w)?;
        let z = tape.add(z, b)?;
        h = if i == last { z } else { tape.relu(z) };
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_counts() {
        assert_eq!(EncoderSpec::new("a", 4, vec![], 3).count_params(), 15);
        assert_eq!(EncoderSpec::new("b", 2, vec![2], 2).count_params(), 12);
    }

    #[test]
    fn default_ratio_in_band() {
        let t = EncoderSpec::teacher_default().count_params() as f64;
        let s = EncoderSpec::student_default().count_params() as f64;
        let ratio = t / s;
        assert!((3.0..=5.0).contains(&ratio), "{ratio}");
        assert_eq!(EncoderSpec::teacher_default().count_params(), 49_600);
        assert_eq!(EncoderSpec::student_default().count_params(), 12_480);
    }

    #[test]
    fn flops() {
        let s = EncoderSpec::new("a", 4, vec![], 3);
        assert_eq!(s.estimate_flops(1), 24);
        assert_eq!(EncoderSpec::teacher_default().estimate_flops(0), 0);
    }

    #[test]
    fn init_has_zero_bias_and_is_deterministic() {
        let spec = EncoderSpec::new("a", 2, vec![], 3);
        let a = EncoderParams::init(&spec, &mut Rng::new(5)).unwrap();
        assert_eq!(a.layers[0].bias.data(), &[0.0, 0.0, 0.0]);
        let b = EncoderParams::init(&spec, &mut Rng::new(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn he_init_std_within_20_percent() {
        let spec = EncoderSpec::new("a", 4, vec![8], 3);
        let target = (2.0f64 / 4.0).sqrt();
        let mut vals = Vec::new();
        for seed in 0..10 {
            let p = EncoderParams::init(&spec, &mut Rng::new(seed)).unwrap();
            vals.extend_from_slice(p.layers[0].weight.data());
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((std - target).abs() / target < 0.2, "std {std} target {target}");
    }

    #[test]
    fn zero_params_give_zero_features() {
        let p = EncoderParams::zeros(&EncoderSpec::student_default()).unwrap();
        let mut rng = Rng::new(1);
        let x = Tensor::new(3, 64, (0..192).map(|_| rng.normal()).collect()).unwrap();
        assert_eq!(p.forward(&x).unwrap(), Tensor::zeros(3, 64));
    }

    #[test]
    fn single_layer_is_affine() {
        let spec = EncoderSpec::new("lin", 3, vec![], 2);
        let mut p = EncoderParams::init(&spec, &mut Rng::new(2)).unwrap();
        p.layers[0].bias = Tensor::row_vector(&[0.25, -1.0]);
        let x = Tensor::from_rows(&[[1.0, -2.0, 0.5], [0.0, 3.0, 1.0]]).unwrap();
        let got = p.forward(&x).unwrap();
        let mm = x.matmul(&p.layers[0].weight).unwrap();
        for r in 0..2 {
            assert_eq!(got.get(r, 0), mm.get(r, 0) + 0.25);
            assert_eq!(got.get(r, 1), mm.get(r, 1) - 1.0);
        }
    }

    #[test]
    fn tape_forward_matches_plain_forward() {
        let spec = EncoderSpec::new("s", 5, vec![7, 4], 3);
        let p = EncoderParams::init(&spec, &mut Rng::new(9)).unwrap();
        let mut rng = Rng::new(10);
        let x = Tensor::new(6, 5, (0..30).map(|_| rng.normal()).collect()).unwrap();
        let mut tape = Tape::new();
        let vars = p.register(&mut tape, true);
        let xv = tape.constant(x.clone());
        let out = p.forward_tape(&mut tape, &vars, xv).unwrap();
        assert_eq!(tape.value(out), &p.forward(&x).unwrap());
    }

    #[test]
    fn forward_is_homogeneous_in_last_layer() {
        let spec = EncoderSpec::new("s", 4, vec![6], 3);
        let p = EncoderParams::init(&spec, &mut Rng::new(3)).unwrap();
        let mut scaled = p.clone();
        scaled.layers[1].weight = scaled.layers[1].weight.scale(2.5);
        let mut rng = Rng::new(4);
        let x = Tensor::new(5, 4, (0..20).map(|_| rng.normal()).collect()).unwrap();
        let a = p.forward(&x).unwrap().scale(2.5);
        let b = scaled.forward(&x).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn pinned_forward_output() {
        let spec = EncoderSpec::new("pin", 3, vec![4], 2);
        let p = EncoderParams::init(&spec, &mut Rng::new(2024)).unwrap();
        let x = Tensor::from_rows(&[[0.5, -1.0, 2.0]]).unwrap();
        let out = p.forward(&x).unwrap();
        let expected = PINNED_FORWARD;
        assert!((out.get(0, 0) - expected[0]).abs() < 1e-12, "{:?}", out);
        assert!((out.get(0, 1) - expected[1]).abs() < 1e-12, "{:?}", out);
    }

    const PINNED_FORWARD: [f64; 2] = [-2.21274460878339, 1.707364752322388];

    #[test]
    fn shape_mismatch_rejected() {
        let p = EncoderParams::zeros(&EncoderSpec::new("a", 4, vec![], 3)).unwrap();
        assert!(matches!(p.forward(&Tensor::zeros(2, 5)), Err(Error::Dimension { .. })));
    }

    #[test]
    fn serialized_scalar_count_matches_param_count() {
        let spec = EncoderSpec::teacher_default();
        let p = EncoderParams::zeros(&spec).unwrap();
        assert_eq!(p.scalar_count(), spec.count_params());
    }
}
