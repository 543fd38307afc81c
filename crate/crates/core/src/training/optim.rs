use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Momentum buffers, one per parameter tensor, plus the number of steps taken.
#[derive(Clone, Debug, PartialEq)]
pub struct OptState {
    pub buffers: Vec<Tensor>,
    pub step: usize,
}

impl OptState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        Self {
            buffers: params.into_iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect(),
            step: 0,
        }
    }
}

/// Classical SGD with momentum and L2 weight decay folded into the gradient:
/// `buf = momentum * buf + grad + wd * param; param -= lr * buf`.
pub fn sgd_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut OptState,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.buffers.len() {
        return Err(Error::Contract(format!(
            "sgd_step got {} params, {} grads, {} buffers",
            params.len(),
            grads.len(),
            state.buffers.len()
        )));
    }
    for ((p, g), b) in params.iter().zip(grads).zip(&state.buffers) {
        if p.shape() != g.shape() {
            return Err(Error::dim("sgd_step grad", p.shape(), g.shape()));
        }
        if p.shape() != b.shape() {
            return Err(Error::dim("sgd_step buffer", p.shape(), b.shape()));
        }
    }
    for ((p, g), b) in params.iter_mut().zip(grads).zip(state.buffers.iter_mut()) {
        let pd = p.data_mut();
        let gd = g.data();
        for ((w, bv), gv) in pd.iter_mut().zip(b.data_mut()).zip(gd) {
            *bv = momentum * *bv + gv + weight_decay * *w;
            *w -= lr * *bv;
        }
    }
    state.step += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(w: &mut Tensor, g: f64, st: &mut OptState, lr: f64, m: f64, wd: f64) {
        let grads = [Tensor::filled(w.rows(), w.cols(), g)];
        sgd_step(&mut [w], &grads, st, lr, m, wd).unwrap();
    }

    #[test]
    fn single_plain_step() {
        let mut w = Tensor::scalar(1.0);
        let mut st = OptState::new([&w]);
        step(&mut w, 1.0, &mut st, 0.1, 0.0, 0.0);
        assert!((w.as_scalar().unwrap() - 0.9).abs() < 1e-15);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn momentum_recurrence() {
        let mut w = Tensor::scalar(1.0);
        let mut st = OptState::new([&w]);
        let (mut w_ref, mut b_ref) = (1.0f64, 0.0f64);
        for _ in 0..2 {
            step(&mut w, 1.0, &mut st, 0.1, 0.9, 0.0);
            b_ref = 0.9 * b_ref + 1.0;
            w_ref -= 0.1 * b_ref;
        }
        assert!((w.as_scalar().unwrap() - 0.71).abs() < 1e-12);
        assert_eq!(w.as_scalar().unwrap(), w_ref);
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let mut w = Tensor::new(2, 2, vec![0.3, -1.0, 2.5, 7.0]).unwrap();
        let before = w.clone();
        let mut st = OptState::new([&w]);
        for _ in 0..3 {
            step(&mut w, 0.0, &mut st, 0.1, 0.9, 0.0);
        }
        assert_eq!(w, before);
    }

    #[test]
    fn weight_decay_enters_gradient() {
        let mut w = Tensor::scalar(2.0);
        let mut st = OptState::new([&w]);
        step(&mut w, 0.0, &mut st, 0.5, 0.0, 0.1);
        assert!((w.as_scalar().unwrap() - 1.9).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut w = Tensor::zeros(2, 2);
        let mut st = OptState::new([&w]);
        let g = [Tensor::zeros(2, 3)];
        assert!(sgd_step(&mut [&mut w], &g, &mut st, 0.1, 0.9, 0.0).is_err());
        assert!(sgd_step(&mut [&mut w], &[], &mut st, 0.1, 0.9, 0.0).is_err());
    }
}
