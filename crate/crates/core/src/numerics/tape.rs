//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation eagerly: values are computed when the
//! op is pushed, and [`Tape::backward`] walks the nodes in reverse order to
//! accumulate gradients. Nodes are append-only, so inputs always precede
//! the nodes that consume them.
//!
//! Binary elementwise ops (`add`, `sub`, `mul`, `div`) accept a right-hand
//! side of the same shape, a `1 x cols` row, a `rows x 1` column or a
//! `1 x 1` scalar, which is broadcast against the left-hand side.

use crate::error::{Error, Result};
use crate::numerics::tensor::{dot, l2_norm, softmax_in_place, Tensor, NORM_FLOOR};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OpKind {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Log(Var),
    Exp(Var),
    RowNorm(Var),
    /// Elementwise maximum. Ties send the gradient to the first argument.
    Max(Var, Var),
    Sum(Var),
    Mean(Var),
    RowDot(Var, Var),
    Transpose(Var),
    Diag(Var),
}

#[derive(Clone, Debug)]
pub struct TapeNode {
    pub op: OpKind,
    pub value: Tensor,
    requires_grad: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<TapeNode>,
    grads: Vec<Option<Tensor>>,
}

#[derive(Clone, Copy, PartialEq)]
enum Bcast {
    Same,
    Row,
    Col,
    Scalar,
}

fn bcast_kind(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Bcast> {
    let (ar, ac) = a.shape();
    match b.shape() {
        s if s == (ar, ac) => Ok(Bcast::Same),
        (1, 1) => Ok(Bcast::Scalar),
        (1, c) if c == ac => Ok(Bcast::Row),
        (r, 1) if r == ar => Ok(Bcast::Col),
        _ => Err(Error::dim(op, a.shape(), b.shape())),
    }
}

#[inline]
fn bidx(kind: Bcast, cols: usize, r: usize, c: usize) -> usize {
    match kind {
        Bcast::Same => r * cols + c,
        Bcast::Row => c,
        Bcast::Col => r,
        Bcast::Scalar => 0,
    }
}

fn zip_bcast(a: &Tensor, b: &Tensor, kind: Bcast, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let (rows, cols) = a.shape();
    let (ad, bd) = (a.data(), b.data());
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            out.push(f(ad[r * cols + c], bd[bidx(kind, cols, r, c)]));
        }
    }
    Tensor::new(rows, cols, out).expect("shape preserved")
}

/// Sums `g` (shaped like the lhs) down to the broadcast rhs shape, applying `f(g, a, b)` per entry.
fn reduce_bcast(
    g: &Tensor,
    a: &Tensor,
    b: &Tensor,
    kind: Bcast,
    f: impl Fn(f64, f64, f64) -> f64,
) -> Tensor {
    let (rows, cols) = g.shape();
    let mut out = Tensor::zeros(b.rows(), b.cols());
    let (gd, ad, bd) = (g.data(), a.data(), b.data());
    let od = out.data_mut();
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            let j = bidx(kind, cols, r, c);
            od[j] += f(gd[i], ad[i], bd[j]);
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, v: Var) -> &TapeNode {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        self.value(v).as_scalar()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op: OpKind, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(TapeNode {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Differentiable input (a parameter).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(OpKind::Leaf, value, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(OpKind::Constant, value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(OpKind::MatMul(a, b), value, rg))
    }

    fn binary(
        &mut self,
        name: &'static str,
        op: OpKind,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let kind = bcast_kind(name, av, bv)?;
        let value = zip_bcast(av, bv, kind, f);
        let rg = self.rg(&[a, b]);
        Ok(self.push(op, value, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", OpKind::Add(a, b), a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", OpKind::Sub(a, b), a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", OpKind::Mul(a, b), a, b, |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let bv = self.value(b);
        if bv.data().iter().any(|&x| x == 0.0) {
            return Err(Error::Contract("division by zero on tape".into()));
        }
        self.binary("div", OpKind::Div(a, b), a, b, |x, y| x / y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scale(c);
        let rg = self.rg(&[a]);
        self.push(OpKind::Scale(a, c), value, rg)
    }

    /// `a + c` for a scalar constant `c`.
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let k = self.constant(Tensor::scalar(c));
        self.add(a, k).expect("scalar broadcast always valid")
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let rg = self.rg(&[a]);
        self.push(OpKind::Relu(a), value, rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).softmax_rows()?;
        let rg = self.rg(&[a]);
        Ok(self.push(OpKind::SoftmaxRows(a), value, rg))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).log_softmax_rows()?;
        let rg = self.rg(&[a]);
        Ok(self.push(OpKind::LogSoftmaxRows(a), value, rg))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.data().iter().any(|&x| x <= 0.0) {
            return Err(Error::Contract("log of a non-positive entry".into()));
        }
        let value = av.map(f64::ln);
        let rg = self.rg(&[a]);
        Ok(self.push(OpKind::Log(a), value, rg))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        let rg = self.rg(&[a]);
        self.push(OpKind::Exp(a), value, rg)
    }

    /// Row Euclidean norms (`rows x 1`), clamped below at [`NORM_FLOOR`].
    pub fn row_norm(&mut self, a: Var) -> Var {
        let value = self.value(a).row_norms().map(|n| n.max(NORM_FLOOR));
        let rg = self.rg(&[a]);
        self.push(OpKind::RowNorm(a), value, rg)
    }

    pub fn max(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::dim("max", self.value(a).shape(), self.value(b).shape()));
        }
        self.binary("max", OpKind::Max(a, b), a, b, |x, y| if x >= y { x } else { y })
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(OpKind::Sum(a), value, rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).mean());
        let rg = self.rg(&[a]);
        self.push(OpKind::Mean(a), value, rg)
    }

    /// Row-wise dot products of two equally shaped tensors (`rows x 1`).
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::dim("row_dot", av.shape(), bv.shape()));
        }
        let data = (0..av.rows()).map(|r| dot(av.row(r), bv.row(r))).collect();
        let value = Tensor::new(av.rows(), 1, data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(OpKind::RowDot(a, b), value, rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.rg(&[a]);
        self.push(OpKind::Transpose(a), value, rg)
    }

    /// Diagonal of a square matrix as a column.
    pub fn diag(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.rows() != av.cols() {
            return Err(Error::dim("diag", av.shape(), (av.cols(), av.rows())));
        }
        let data = (0..av.rows()).map(|i| av.get(i, i)).collect();
        let value = Tensor::new(av.rows(), 1, data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(OpKind::Diag(a), value, rg))
    }

    /// Rows divided by their (floored) norms.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let n = self.row_norm(a);
        self.div(a, n)
    }

    /// Pairwise cosine similarity of the rows of `a` and `b`.
    pub fn cosine_matrix(&mut self, a: Var, b: Var) -> Result<Var> {
        if let Some(row) = self.value(a).first_zero_row() {
            return Err(Error::ZeroNorm {
                what: "cosine_matrix(lhs)",
                row,
            });
        }
        if let Some(row) = self.value(b).first_zero_row() {
            return Err(Error::ZeroNorm {
                what: "cosine_matrix(rhs)",
                row,
            });
        }
        let an = self.normalize_rows(a)?;
        let bn = self.normalize_rows(b)?;
        let bt = self.transpose(bn);
        self.matmul(an, bt)
    }

    /// Gradient accumulated for `v` by the last [`Tape::backward`], zeros if none reached it.
    pub fn grad(&self, v: Var) -> Tensor {
        match self.grads.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.value(v).shape();
                Tensor::zeros(r, c)
            }
        }
    }

    fn accumulate(&mut self, v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(existing) => existing
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .for_each(|(e, x)| *e += x),
            slot @ None => *slot = Some(g),
        }
    }

    /// Reverse accumulation from a scalar `loss`. Returns the gradients of every
    /// differentiable leaf, in tape order.
    pub fn backward(&mut self, loss: Var) -> Result<Vec<(Var, Tensor)>> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a 1x1 loss, got {}x{}",
                shape.0, shape.1
            )));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g)?;
            self.grads[i] = Some(g);
        }

        Ok(self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.op == OpKind::Leaf)
            .map(|(i, _)| (Var(i), self.grad(Var(i))))
            .collect())
    }

    fn propagate(&mut self, i: usize, g: &Tensor) -> Result<()> {
        let op = self.nodes[i].op;
        match op {
            OpKind::Leaf | OpKind::Constant => {}
            OpKind::MatMul(a, b) => {
                let ga = g.matmul_t(self.value(b))?;
                let gb = self.value(a).t_matmul(g)?;
                self.accumulate(a, ga);
                self.accumulate(b, gb);
            }
            OpKind::Add(a, b) | OpKind::Sub(a, b) => {
                let sign = if matches!(op, OpKind::Add(..)) { 1.0 } else { -1.0 };
                let (av, bv) = (self.value(a), self.value(b));
                let kind = bcast_kind("add", av, bv)?;
                let gb = reduce_bcast(g, av, bv, kind, |g, _, _| sign * g);
                self.accumulate(a, g.clone());
                self.accumulate(b, gb);
            }
            OpKind::Mul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let kind = bcast_kind("mul", av, bv)?;
                let ga = zip_bcast(g, bv, kind, |g, y| g * y);
                let gb = reduce_bcast(g, av, bv, kind, |g, x, _| g * x);
                self.accumulate(a, ga);
                self.accumulate(b, gb);
            }
            OpKind::Div(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let kind = bcast_kind("div", av, bv)?;
                let ga = zip_bcast(g, bv, kind, |g, y| g / y);
                let gb = reduce_bcast(g, av, bv, kind, |g, x, y| -g * x / (y * y));
                self.accumulate(a, ga);
                self.accumulate(b, gb);
            }
            OpKind::Scale(a, c) => self.accumulate(a, g.scale(c)),
            OpKind::Relu(a) => {
                let av = self.value(a);
                let data = g
                    .data()
                    .iter()
                    .zip(av.data())
                    .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                    .collect();
                let ga = Tensor::new(av.rows(), av.cols(), data)?;
                self.accumulate(a, ga);
            }
            OpKind::SoftmaxRows(a) => {
                let y = &self.nodes[i].value;
                let mut ga = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let s = dot(yr, gr);
                    for (o, (&yv, &gv)) in ga.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                        *o = yv * (gv - s);
                    }
                }
                self.accumulate(a, ga);
            }
            OpKind::LogSoftmaxRows(a) => {
                let y = &self.nodes[i].value;
                let mut ga = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let gsum: f64 = g.row(r).iter().sum();
                    let mut p = self.value(a).row(r).to_vec();
                    softmax_in_place(&mut p);
                    for (o, (&pv, &gv)) in ga.row_mut(r).iter_mut().zip(p.iter().zip(g.row(r))) {
                        *o = gv - pv * gsum;
                    }
                }
                self.accumulate(a, ga);
            }
            OpKind::Log(a) => {
                let av = self.value(a);
                let data = g.data().iter().zip(av.data()).map(|(g, x)| g / x).collect();
                let ga = Tensor::new(av.rows(), av.cols(), data)?;
                self.accumulate(a, ga);
            }
            OpKind::Exp(a) => {
                let y = &self.nodes[i].value;
                let data = g.data().iter().zip(y.data()).map(|(g, y)| g * y).collect();
                let ga = Tensor::new(y.rows(), y.cols(), data)?;
                self.accumulate(a, ga);
            }
            OpKind::RowNorm(a) => {
                let av = self.value(a);
                let mut ga = Tensor::zeros(av.rows(), av.cols());
                for r in 0..av.rows() {
                    let n = l2_norm(av.row(r));
                    if n > NORM_FLOOR {
                        let k = g.get(r, 0) / n;
                        for (o, &x) in ga.row_mut(r).iter_mut().zip(av.row(r)) {
                            *o = k * x;
                        }
                    }
                }
                self.accumulate(a, ga);
            }
            OpKind::Max(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let (rows, cols) = av.shape();
                let mut ga = Vec::with_capacity(rows * cols);
                let mut gb = Vec::with_capacity(rows * cols);
                for ((&gv, &x), &y) in g.data().iter().zip(av.data()).zip(bv.data()) {
                    if x >= y {
                        ga.push(gv);
                        gb.push(0.0);
                    } else {
                        ga.push(0.0);
                        gb.push(gv);
                    }
                }
                let ga = Tensor::new(rows, cols, ga)?;
                let gb = Tensor::new(rows, cols, gb)?;
                self.accumulate(a, ga);
                self.accumulate(b, gb);
            }
            OpKind::Sum(a) => {
                let (r, c) = self.value(a).shape();
                self.accumulate(a, Tensor::filled(r, c, g.data()[0]));
            }
            OpKind::Mean(a) => {
                let (r, c) = self.value(a).shape();
                let n = (r * c).max(1) as f64;
                self.accumulate(a, Tensor::filled(r, c, g.data()[0] / n));
            }
            OpKind::RowDot(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let mut ga = bv.clone();
                let mut gb = av.clone();
                for r in 0..av.rows() {
                    let k = g.get(r, 0);
                    ga.row_mut(r).iter_mut().for_each(|x| *x *= k);
                    gb.row_mut(r).iter_mut().for_each(|x| *x *= k);
                }
                self.accumulate(a, ga);
                self.accumulate(b, gb);
            }
            OpKind::Transpose(a) => self.accumulate(a, g.transpose()),
            OpKind::Diag(a) => {
                let n = g.rows();
                let mut ga = Tensor::zeros(n, n);
                for k in 0..n {
                    ga.set(k, k, g.get(k, 0));
                }
                self.accumulate(a, ga);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::from_rows(&[[1.0, -2.0, 3.0], [0.5, 0.0, 7.0]]).unwrap());
        let s = t.sum(x);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x), Tensor::ones(2, 3));
    }

    #[test]
    fn zero_scale_gives_zero_grad() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::from_rows(&[[1.0, 2.0]]).unwrap());
        let y = t.scale(x, 0.0);
        let s = t.sum(y);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x), Tensor::zeros(1, 2));
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::zeros(2, 2));
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn max_tie_routes_to_first_argument() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::from_rows(&[[2.0, 1.0, 3.0]]).unwrap());
        let b = t.leaf(Tensor::from_rows(&[[2.0, 4.0, 0.0]]).unwrap());
        let m = t.max(a, b).unwrap();
        let s = t.sum(m);
        t.backward(s).unwrap();
        assert_eq!(t.grad(a).data(), &[1.0, 0.0, 1.0]);
        assert_eq!(t.grad(b).data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn broadcast_row_bias_gradient_sums_rows() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::ones(3, 2));
        let b = t.leaf(Tensor::row_vector(&[0.5, -0.5]));
        let y = t.add(x, b).unwrap();
        let s = t.sum(y);
        t.backward(s).unwrap();
        assert_eq!(t.grad(b).data(), &[3.0, 3.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(Tensor::ones(2, 2));
        let x = t.leaf(Tensor::ones(2, 2));
        let y = t.mul(c, x).unwrap();
        let s = t.sum(y);
        let grads = t.backward(s).unwrap();
        assert_eq!(grads.len(), 1);
        assert_eq!(grads[0].0, x);
        assert_eq!(t.grad(c), Tensor::zeros(2, 2));
    }

    #[test]
    fn values_unchanged_by_backward() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::from_rows(&[[0.3, -1.2], [2.0, 0.1]]).unwrap());
        let y = t.softmax_rows(x).unwrap();
        let l = t.log(y).unwrap();
        let s = t.mean(l);
        let before: Vec<Tensor> = (0..t.len()).map(|i| t.value(Var(i)).clone()).collect();
        t.backward(s).unwrap();
        let g1 = t.grad(x);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x), g1);
        for (i, v) in before.iter().enumerate() {
            assert_eq!(t.value(Var(i)), v);
        }
    }

    #[test]
    fn cosine_on_tape_matches_direct() {
        let a = Tensor::from_rows(&[[3.0, 4.0], [1.0, -2.0]]).unwrap();
        let b = Tensor::from_rows(&[[4.0, 3.0], [0.0, 5.0], [-1.0, 1.0]]).unwrap();
        let mut t = Tape::new();
        let (av, bv) = (t.constant(a.clone()), t.constant(b.clone()));
        let c = t.cosine_matrix(av, bv).unwrap();
        let direct = Tensor::cosine_matrix(&a, &b).unwrap();
        assert!(t.value(c).max_abs_diff(&direct) < 1e-15);
    }
}
