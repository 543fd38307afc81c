//! Central finite-difference verification of tape gradients.

use crate::error::{Error, Result};
use crate::numerics::tape::{Tape, Var};
use crate::numerics::tensor::Tensor;

/// Outcome of comparing analytic and numeric gradients.
#[derive(Clone, Debug)]
pub struct FdReport {
    /// Max over coordinates of `min(relative, absolute)` discrepancy.
    pub max_discrepancy: f64,
    /// `(parameter index, flat coordinate)` of the worst coordinate.
    pub worst: (usize, usize),
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
}

impl FdReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_discrepancy <= tol
    }
}

/// Finite-difference step for a coordinate with value `theta`.
#[inline]
pub fn fd_step(theta: f64) -> f64 {
    1e-6 * (1.0 + theta.abs())
}

/// Per-coordinate discrepancy: passes if either the absolute or the relative error is small.
pub fn discrepancy(analytic: f64, numeric: f64) -> f64 {
    let abs = (analytic - numeric).abs();
    let scale = analytic.abs().max(numeric.abs());
    let rel = if scale > 0.0 { abs / scale } else { 0.0 };
    abs.min(rel)
}

/// Checks a scalar tape program `f` of one parameter tensor.
pub fn finite_diff_check<F>(f: F, theta: &Tensor) -> Result<FdReport>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    finite_diff_check_many(f, std::slice::from_ref(theta))
}

/// Checks a scalar tape program `f` of several parameter tensors.
///
/// The analytic gradient comes from [`Tape::backward`]; the numeric one from
/// forward-only evaluations at `theta ± h`.
pub fn finite_diff_check_many<F>(mut f: F, thetas: &[Tensor]) -> Result<FdReport>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = thetas.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| tape.grad(v)).collect();
    compare_with_numeric(&mut f, thetas, analytic)
}

/// Compares a caller-supplied analytic gradient against central differences of `f`.
pub fn compare_with_numeric<F>(f: &mut F, thetas: &[Tensor], analytic: Vec<Tensor>) -> Result<FdReport>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut eval = |params: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.scalar(out)
    };

    let mut work: Vec<Tensor> = thetas.to_vec();
    let mut numeric = Vec::with_capacity(thetas.len());
    let mut max_discrepancy = 0.0f64;
    let mut worst = (0, 0);
    let mut flat = 0usize;
    for (p, theta) in thetas.iter().enumerate() {
        let mut num = Tensor::zeros(theta.rows(), theta.cols());
        for k in 0..theta.len() {
            let x = theta.data()[k];
            let h = fd_step(x);
            work[p].data_mut()[k] = x + h;
            let fp = eval(&work)?;
            work[p].data_mut()[k] = x - h;
            let fm = eval(&work)?;
            work[p].data_mut()[k] = x;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::Probe { index: flat + k });
            }
            let d = (fp - fm) / (2.0 * h);
            num.data_mut()[k] = d;
            let disc = discrepancy(analytic[p].data()[k], d);
            if disc > max_discrepancy || disc.is_nan() {
                max_discrepancy = if disc.is_nan() { f64::INFINITY } else { disc };
                worst = (p, k);
            }
        }
        flat += theta.len();
        numeric.push(num);
    }
    Ok(FdReport {
        max_discrepancy,
        worst,
        analytic,
        numeric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let theta = Tensor::row_vector(&[1.0, 2.0]);
        let report = finite_diff_check(
            |t, v| {
                let sq = t.mul(v[0], v[0])?;
                Ok(t.sum(sq))
            },
            &theta,
        )
        .unwrap();
        assert_eq!(report.analytic[0].data(), &[2.0, 4.0]);
        assert!(report.max_discrepancy <= 1e-8, "{}", report.max_discrepancy);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let theta = Tensor::row_vector(&[0.3, -4.0, 9.0]);
        let report = finite_diff_check(
            |t, v| {
                let z = t.scale(v[0], 0.0);
                let s = t.sum(z);
                Ok(t.offset(s, 5.0))
            },
            &theta,
        )
        .unwrap();
        assert_eq!(report.analytic[0], Tensor::zeros(1, 3));
        assert!(report.max_discrepancy <= 1e-10);
    }

    #[test]
    fn non_finite_probe_is_an_error() {
        let theta = Tensor::row_vector(&[1.0]);
        let err = finite_diff_check(
            |t, v| {
                let s = t.sum(v[0]);
                if t.requires_grad(v[0]) {
                    Ok(s)
                } else {
                    Ok(t.constant(Tensor::scalar(f64::NAN)))
                }
            },
            &theta,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Probe { index: 0 }));
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let theta = Tensor::row_vector(&[0.5, 1.5]);
        let mut f = |t: &mut Tape, v: &[Var]| -> Result<Var> {
            let e = t.exp(v[0]);
            Ok(t.sum(e))
        };
        let wrong = vec![Tensor::row_vector(&[-0.5f64.exp(), -1.5f64.exp()])];
        let report = compare_with_numeric(&mut f, &[theta], wrong).unwrap();
        assert!(report.max_discrepancy > 1.0);
    }
}
