use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    /// Inverse regularization strength.
    pub c: f64,
    pub max_iterations: usize,
    /// Stop once the largest gradient component falls below this.
    pub tolerance: f64,
    /// Standardize each feature with training-set mean and std before fitting.
    pub standardize: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            c: 3.16,
            max_iterations: 1000,
            tolerance: 1e-6,
            standardize: false,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Contract(format!("probe C must be positive, got {}", self.c)));
        }
        if self.max_iterations == 0 {
            return Err(Error::Contract("probe max_iterations must be >= 1".into()));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::Contract("probe tolerance must be >= 0".into()));
        }
        Ok(())
    }
}

/// Per-feature affine map fitted on training features.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Tensor) -> Self {
        let (n, d) = x.shape();
        let mut mean = vec![0.0; d];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(x.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for r in 0..n {
            for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd > 1e-12 {
                    1.0 / sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        let mut out = x.clone();
        for r in 0..out.rows() {
            for ((v, m), s) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) * s;
            }
        }
        out
    }
}

/// A fitted logistic-regression probe.
#[derive(Clone, Debug, PartialEq)]
pub struct LogReg {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub standardizer: Option<Standardizer>,
    /// Penalized objective after each accepted iteration, starting at the initial point.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

impl LogReg {
    /// Raw decision values `w . f + b`.
    pub fn decision(&self, features: &Tensor) -> Result<Vec<f64>> {
        if features.cols() != self.weights.len() {
            return Err(Error::dim(
                "probe decision",
                features.shape(),
                (features.rows(), self.weights.len()),
            ));
        }
        let x = match &self.standardizer {
            Some(s) => s.apply(features),
            None => features.clone(),
        };
        Ok((0..x.rows())
            .map(|r| crate::numerics::tensor::dot(x.row(r), &self.weights) + self.bias)
            .collect())
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

struct Problem<'a> {
    x: &'a Tensor,
    y: Vec<f64>,
    inv_c: f64,
}

impl Problem<'_> {
    fn margins(&self, w: &[f64], b: f64) -> Vec<f64> {
        (0..self.x.rows())
            .map(|r| crate::numerics::tensor::dot(self.x.row(r), w) + b)
            .collect()
    }

    fn objective(&self, w: &[f64], b: f64) -> f64 {
        let data: f64 = self
            .margins(w, b)
            .iter()
            .zip(&self.y)
            .map(|(z, y)| softplus(*z) - y * z)
            .sum();
        data + 0.5 * self.inv_c * w.iter().map(|v| v * v).sum::<f64>()
    }

    fn gradient(&self, w: &[f64], b: f64) -> (Vec<f64>, f64) {
        let mut gw: Vec<f64> = w.iter().map(|v| self.inv_c * v).collect();
        let mut gb = 0.0;
        for (r, (z, y)) in self.margins(w, b).iter().zip(&self.y).enumerate() {
            let e = sigmoid(*z) - y;
            gb += e;
            for (g, xv) in gw.iter_mut().zip(self.x.row(r)) {
                *g += e * xv;
            }
        }
        (gw, gb)
    }
}

/// Fits `w, b` minimizing `sum_i logloss(y_i, sigmoid(w . f_i + b)) + |w|^2 / (2C)`
/// by full-batch gradient descent with Armijo backtracking. The bias is not
/// penalized. Every accepted step lowers the objective.
pub fn train_logreg(features: &Tensor, labels: &[u8], cfg: &ProbeConfig) -> Result<LogReg> {
    cfg.validate()?;
    let (n, d) = features.shape();
    if labels.len() != n {
        return Err(Error::dim("train_logreg", (n, d), (labels.len(), 1)));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::DegenerateLabels("probe labels must be 0 or 1".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    if n < 2 || n_pos == 0 || n_pos == n {
        return Err(Error::DegenerateLabels(format!(
            "probe needs both classes among >= 2 samples, got {n_pos} positive of {n}"
        )));
    }
    if !features.is_finite() {
        return Err(Error::Contract("probe features contain non-finite values".into()));
    }
    let standardizer = cfg.standardize.then(|| Standardizer::fit(features));
    let x = match &standardizer {
        Some(s) => s.apply(features),
        None => features.clone(),
    };
    let problem = Problem {
        x: &x,
        y: labels.iter().map(|&l| l as f64).collect(),
        inv_c: 1.0 / cfg.c,
    };

    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut f = problem.objective(&w, b);
    let mut trace = vec![f];
    // Initial step from a Lipschitz bound of the data term: |X|_F^2 / 4.
    let lipschitz = 0.25 * (x.data().iter().map(|v| v * v).sum::<f64>() + n as f64) + problem.inv_c;
    let mut step = 1.0 / lipschitz;
    let mut iterations = 0;
    for _ in 0..cfg.max_iterations {
        let (gw, gb) = problem.gradient(&w, b);
        let gmax = gw.iter().fold(gb.abs(), |m, g| m.max(g.abs()));
        if gmax <= cfg.tolerance {
            break;
        }
        let gsq: f64 = gw.iter().map(|g| g * g).sum::<f64>() + gb * gb;
        let mut t = step * 2.0;
        let accepted = loop {
            let nw: Vec<f64> = w.iter().zip(&gw).map(|(wi, g)| wi - t * g).collect();
            let nb = b - t * gb;
            let nf = problem.objective(&nw, nb);
            if nf <= f - 0.5 * t * gsq {
                break Some((nw, nb, nf));
            }
            t *= 0.5;
            if t < 1e-20 {
                break None;
            }
        };
        let Some((nw, nb, nf)) = accepted else { break };
        w = nw;
        b = nb;
        f = nf;
        step = t;
        trace.push(f);
        iterations += 1;
    }
    Ok(LogReg {
        weights: w,
        bias: b,
        standardizer,
        objective_trace: trace,
        iterations,
    })
}
