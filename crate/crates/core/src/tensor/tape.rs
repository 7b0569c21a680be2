use std::f64::consts::PI;

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulConst(Var, Vec<f64>),
    ScaleRows(Var, Vec<f64>),
    Mish(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    SymExp(Var),
    ClampMin(Var, f64),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    ConcatCols(Var, Var),
    SliceCols(Var, usize, usize),
    LogSoftmax(Var),
    Softmax(Var),
    SumRows(Var),
    WeightedSumRows(Var, Vec<f64>),
    SumAll(Var),
    MeanAll(Var),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Records primitive operations in evaluation order; [`Tape::backward`]
/// replays them in reverse.
///
/// Tensors are treated as matrices `[rows, cols]`; a 1-D tensor of length
/// `n` is a single row where row-wise ops apply and a column vector where
/// [`Tape::sum_rows`] produces it.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        0 => (1, 1),
        1 => (1, shape[0]),
        _ => {
            let cols = *shape.last().unwrap();
            (shape[..shape.len() - 1].iter().product(), cols)
        }
    }
}

#[cfg(test)]
fn softplus(x: f64) -> f64 {
    if x > 20.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `tanh(softplus(x))` from a single exponential:
/// with `n = e^x (e^x + 2)`, `tanh(ln(1 + e^x)) = n / (n + 2)`.
fn tanh_softplus(x: f64) -> f64 {
    if x > 20.0 {
        return 1.0;
    }
    let e = x.exp();
    let n = e * (e + 2.0);
    n / (n + 2.0)
}

pub(crate) fn mish(x: f64) -> f64 {
    x * tanh_softplus(x)
}

fn mish_grad(x: f64) -> f64 {
    let t = tanh_softplus(x);
    t + x * (1.0 - t * t) * sigmoid(x)
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every record and gradient.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.grads.clear();
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node { shape, value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shape is consistent")
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, shape: Vec<usize>, value: Vec<f64>) -> Var {
        assert_eq!(shape.iter().product::<usize>(), value.len(), "constant shape/data mismatch");
        self.push(shape, value, Op::Leaf, false)
    }

    /// A leaf that receives a gradient on backward.
    pub fn variable(&mut self, shape: Vec<usize>, value: Vec<f64>) -> Var {
        assert_eq!(shape.iter().product::<usize>(), value.len(), "variable shape/data mismatch");
        self.push(shape, value, Op::Leaf, true)
    }

    pub fn leaf_tensor(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad())
    }

    /// Copies `v`'s value into a new leaf that blocks gradient flow.
    pub fn stop_gradient(&mut self, v: Var) -> Var {
        let n = self.node(v);
        let (shape, value) = (n.shape.clone(), n.value.clone());
        self.push(shape, value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = rows_cols(self.shape(a));
        let (k2, m) = rows_cols(self.shape(b));
        if k != k2 {
            return Err(Error::config(format!("matmul shape mismatch: {:?} x {:?}", self.shape(a), self.shape(b))));
        }
        let mut out = vec![0.0; n * m];
        super::gemm_acc(self.value(a), self.value(b), &mut out, n, k, m);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![n, m], out, Op::MatMul(a, b), rg))
    }

    /// `x[n, m] + b[m]` broadcast over rows.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (n, m) = rows_cols(self.shape(x));
        if self.node(b).value.len() != m {
            return Err(Error::config(format!("bias shape mismatch: {:?} + {:?}", self.shape(x), self.shape(b))));
        }
        let bv = &self.node(b).value;
        let mut out = self.node(x).value.clone();
        for r in 0..n {
            out[r * m..(r + 1) * m].iter_mut().zip(bv).for_each(|(o, b)| *o += b);
        }
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(shape, out, Op::AddBias(x, b), rg))
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<(Vec<usize>, Vec<f64>, bool)> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::config(format!("{name} shape mismatch: {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| f(*x, *y)).collect();
        Ok((self.shape(a).to_vec(), out, self.rg(a) || self.rg(b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (s, v, rg) = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(s, v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (s, v, rg) = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(s, v, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (s, v, rg) = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(s, v, Op::Mul(a, b), rg))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let (s, v, rg) = self.binary(a, b, "div", |x, y| x / y)?;
        Ok(self.push(s, v, Op::Div(a, b), rg))
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let n = self.node(x);
        let shape = n.shape.clone();
        let out = n.value.iter().map(|v| f(*v)).collect();
        let rg = n.requires_grad;
        self.push(shape, out, op, rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::Scale(x, c), |v| v * c)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::AddScalar(x), |v| v + c)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    /// Elementwise product with a constant of the same shape (dropout masks,
    /// fixed targets).
    pub fn mul_const(&mut self, x: Var, c: Vec<f64>) -> Result<Var> {
        if c.len() != self.node(x).value.len() {
            return Err(Error::config(format!("constant of length {} does not match {:?}", c.len(), self.shape(x))));
        }
        let out = self.value(x).iter().zip(&c).map(|(a, b)| a * b).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(shape, out, Op::MulConst(x, c), rg))
    }

    /// Multiplies row `r` of `x` by the constant `w[r]`.
    pub fn scale_rows(&mut self, x: Var, w: Vec<f64>) -> Result<Var> {
        let (n, m) = rows_cols(self.shape(x));
        let n = if self.shape(x).len() == 1 { self.shape(x)[0] } else { n };
        let m = if self.shape(x).len() == 1 { 1 } else { m };
        if w.len() != n {
            return Err(Error::config(format!("row weights of length {} for {:?}", w.len(), self.shape(x))));
        }
        let mut out = self.value(x).to_vec();
        for r in 0..n {
            out[r * m..(r + 1) * m].iter_mut().for_each(|o| *o *= w[r]);
        }
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(shape, out, Op::ScaleRows(x, w), rg))
    }

    pub fn mish(&mut self, x: Var) -> Var {
        self.unary(x, Op::Mish(x), mish)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Op::Log(x), f64::ln)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    /// `sign(x) * (exp(|x|) - 1)`, the inverse of the symmetric log.
    pub fn symexp(&mut self, x: Var) -> Var {
        self.unary(x, Op::SymExp(x), |v| v.signum() * v.abs().exp_m1())
    }

    /// `max(x, lo)`; gradient is zero where the floor is active.
    pub fn clamp_min(&mut self, x: Var, lo: f64) -> Var {
        self.unary(x, Op::ClampMin(x, lo), |v| v.max(lo))
    }

    /// Row-wise layer normalization with affine gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (n, m) = rows_cols(self.shape(x));
        if self.node(gain).value.len() != m || self.node(bias).value.len() != m {
            return Err(Error::config(format!("layer norm over {m} features given gain {:?} and bias {:?}", self.shape(gain), self.shape(bias))));
        }
        let xv = &self.node(x).value;
        let g = &self.node(gain).value;
        let b = &self.node(bias).value;
        let mut out = vec![0.0; n * m];
        let mut xhat = vec![0.0; n * m];
        let mut inv_std = vec![0.0; n];
        for r in 0..n {
            let row = &xv[r * m..(r + 1) * m];
            let mean = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..m {
                let h = (row[j] - mean) * inv;
                xhat[r * m + j] = h;
                out[r * m + j] = h * g[j] + b[j];
            }
        }
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(shape, out, Op::LayerNorm { x, gain, bias, xhat, inv_std }, rg))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, pa) = rows_cols(self.shape(a));
        let (nb, pb) = rows_cols(self.shape(b));
        if na != nb {
            return Err(Error::config(format!("concat row mismatch: {:?} and {:?}", self.shape(a), self.shape(b))));
        }
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = Vec::with_capacity(na * (pa + pb));
        for r in 0..na {
            out.extend_from_slice(&av[r * pa..(r + 1) * pa]);
            out.extend_from_slice(&bv[r * pb..(r + 1) * pb]);
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![na, pa + pb], out, Op::ConcatCols(a, b), rg))
    }

    /// Columns `start..end` of every row.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (n, m) = rows_cols(self.shape(x));
        if start >= end || end > m {
            return Err(Error::config(format!("column slice {start}..{end} of {:?}", self.shape(x))));
        }
        let w = end - start;
        let xv = self.value(x);
        let mut out = Vec::with_capacity(n * w);
        for r in 0..n {
            out.extend_from_slice(&xv[r * m + start..r * m + end]);
        }
        let rg = self.rg(x);
        Ok(self.push(vec![n, w], out, Op::SliceCols(x, start, end), rg))
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let (n, m) = rows_cols(self.shape(x));
        let xv = self.value(x);
        let mut out = vec![0.0; n * m];
        for r in 0..n {
            let row = &xv[r * m..(r + 1) * m];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            for j in 0..m {
                out[r * m + j] = row[j] - lse;
            }
        }
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(shape, out, Op::LogSoftmax(x), rg)
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let (n, m) = rows_cols(self.shape(x));
        let xv = self.value(x);
        let mut out = vec![0.0; n * m];
        for r in 0..n {
            let row = &xv[r * m..(r + 1) * m];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..m {
                let e = (row[j] - mx).exp();
                out[r * m + j] = e;
                z += e;
            }
            out[r * m..(r + 1) * m].iter_mut().for_each(|o| *o /= z);
        }
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(shape, out, Op::Softmax(x), rg)
    }

    /// Sum over the last dimension: `[n, m] -> [n]`.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let (n, m) = rows_cols(self.shape(x));
        let xv = self.value(x);
        let out = (0..n).map(|r| xv[r * m..(r + 1) * m].iter().sum()).collect();
        let rg = self.rg(x);
        self.push(vec![n], out, Op::SumRows(x), rg)
    }

    /// `[n, m] · w[m] -> [n]` with a constant weight vector.
    pub fn weighted_sum_rows(&mut self, x: Var, w: Vec<f64>) -> Result<Var> {
        let (n, m) = rows_cols(self.shape(x));
        if w.len() != m {
            return Err(Error::config(format!("weights of length {} for {:?}", w.len(), self.shape(x))));
        }
        let xv = self.value(x);
        let out = (0..n).map(|r| xv[r * m..(r + 1) * m].iter().zip(&w).map(|(a, b)| a * b).sum()).collect();
        let rg = self.rg(x);
        Ok(self.push(vec![n], out, Op::WeightedSumRows(x, w), rg))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let rg = self.rg(x);
        self.push(vec![1], vec![s], Op::SumAll(x), rg)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(x);
        self.push(vec![1], vec![s], Op::MeanAll(x), rg)
    }

    /// Reverse-mode sweep from a scalar `loss`. Gradients of earlier passes
    /// are discarded; use [`super::ParamSet::accumulate_grads`] to sum them
    /// into parameter tensors.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.node(loss).value.len() != 1 {
            return Err(Error::contract(format!("backward needs a scalar loss, got shape {:?}", self.shape(loss))));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            self.backprop_node(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn acc(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let n = self.nodes[v.0].value.len();
        let slot = self.grads[v.0].get_or_insert_with(|| vec![0.0; n]);
        f(slot);
    }

    fn acc_ew(&mut self, v: Var, g: &[f64], f: impl Fn(usize, f64) -> f64) {
        self.acc(v, |slot| {
            for (j, s) in slot.iter_mut().enumerate() {
                *s += f(j, g[j]);
            }
        });
    }

    fn backprop_node(&mut self, i: usize, g: &[f64]) {
        // Take the op out so input values can be borrowed while writing grads.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (n, k) = rows_cols(&self.nodes[a.0].shape);
                let (_, m) = rows_cols(&self.nodes[b.0].shape);
                if self.rg(*a) {
                    let bt = super::transpose(&self.nodes[b.0].value, k, m);
                    self.acc(*a, |ga| super::gemm_acc(g, &bt, ga, n, m, k));
                }
                if self.rg(*b) {
                    let at = super::transpose(&self.nodes[a.0].value, n, k);
                    self.acc(*b, |gb| super::gemm_acc(&at, g, gb, k, n, m));
                }
            }
            Op::AddBias(x, b) => {
                let (n, m) = rows_cols(&self.nodes[x.0].shape);
                self.acc_ew(*x, g, |_, gj| gj);
                self.acc(*b, |gb| {
                    for r in 0..n {
                        gb.iter_mut().zip(&g[r * m..(r + 1) * m]).for_each(|(o, y)| *o += y);
                    }
                });
            }
            Op::Add(a, b) => {
                self.acc_ew(*a, g, |_, gj| gj);
                self.acc_ew(*b, g, |_, gj| gj);
            }
            Op::Sub(a, b) => {
                self.acc_ew(*a, g, |_, gj| gj);
                self.acc_ew(*b, g, |_, gj| -gj);
            }
            Op::Mul(a, b) => {
                let av = self.nodes[a.0].value.clone();
                let bv = self.nodes[b.0].value.clone();
                self.acc_ew(*a, g, |j, gj| gj * bv[j]);
                self.acc_ew(*b, g, |j, gj| gj * av[j]);
            }
            Op::Div(a, b) => {
                let av = self.nodes[a.0].value.clone();
                let bv = self.nodes[b.0].value.clone();
                self.acc_ew(*a, g, |j, gj| gj / bv[j]);
                self.acc_ew(*b, g, |j, gj| -gj * av[j] / (bv[j] * bv[j]));
            }
            Op::Scale(x, c) => {
                let c = *c;
                self.acc_ew(*x, g, |_, gj| gj * c);
            }
            Op::AddScalar(x) => self.acc_ew(*x, g, |_, gj| gj),
            Op::MulConst(x, c) => self.acc_ew(*x, g, |j, gj| gj * c[j]),
            Op::ScaleRows(x, w) => {
                let m = self.nodes[x.0].value.len() / w.len();
                self.acc_ew(*x, g, |j, gj| gj * w[j / m]);
            }
            Op::Mish(x) => {
                let xv = self.nodes[x.0].value.clone();
                self.acc_ew(*x, g, |j, gj| gj * mish_grad(xv[j]));
            }
            Op::Tanh(x) => {
                let y = self.nodes[i].value.clone();
                self.acc_ew(*x, g, |j, gj| gj * (1.0 - y[j] * y[j]));
            }
            Op::Exp(x) => {
                let y = self.nodes[i].value.clone();
                self.acc_ew(*x, g, |j, gj| gj * y[j]);
            }
            Op::Log(x) => {
                let xv = self.nodes[x.0].value.clone();
                self.acc_ew(*x, g, |j, gj| gj / xv[j]);
            }
            Op::Square(x) => {
                let xv = self.nodes[x.0].value.clone();
                self.acc_ew(*x, g, |j, gj| 2.0 * gj * xv[j]);
            }
            Op::SymExp(x) => {
                let xv = self.nodes[x.0].value.clone();
                self.acc_ew(*x, g, |j, gj| gj * xv[j].abs().exp());
            }
            Op::ClampMin(x, lo) => {
                let lo = *lo;
                let xv = self.nodes[x.0].value.clone();
                self.acc_ew(*x, g, |j, gj| if xv[j] > lo { gj } else { 0.0 });
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let (n, m) = rows_cols(&self.nodes[x.0].shape);
                let gv = self.nodes[gain.0].value.clone();
                self.acc(*gain, |gg| {
                    for r in 0..n {
                        for j in 0..m {
                            gg[j] += g[r * m + j] * xhat[r * m + j];
                        }
                    }
                });
                self.acc(*bias, |gb| {
                    for r in 0..n {
                        for j in 0..m {
                            gb[j] += g[r * m + j];
                        }
                    }
                });
                self.acc(*x, |gx| {
                    let mf = m as f64;
                    for r in 0..n {
                        let mut sum_d = 0.0;
                        let mut sum_dh = 0.0;
                        for j in 0..m {
                            let d = g[r * m + j] * gv[j];
                            sum_d += d;
                            sum_dh += d * xhat[r * m + j];
                        }
                        for j in 0..m {
                            let d = g[r * m + j] * gv[j];
                            gx[r * m + j] += inv_std[r] / mf * (mf * d - sum_d - xhat[r * m + j] * sum_dh);
                        }
                    }
                });
            }
            Op::ConcatCols(a, b) => {
                let (n, pa) = rows_cols(&self.nodes[a.0].shape);
                let (_, pb) = rows_cols(&self.nodes[b.0].shape);
                let w = pa + pb;
                self.acc(*a, |ga| {
                    for r in 0..n {
                        for j in 0..pa {
                            ga[r * pa + j] += g[r * w + j];
                        }
                    }
                });
                self.acc(*b, |gb| {
                    for r in 0..n {
                        for j in 0..pb {
                            gb[r * pb + j] += g[r * w + pa + j];
                        }
                    }
                });
            }
            Op::SliceCols(x, start, end) => {
                let (n, m) = rows_cols(&self.nodes[x.0].shape);
                let (start, w) = (*start, end - start);
                self.acc(*x, |gx| {
                    for r in 0..n {
                        for j in 0..w {
                            gx[r * m + start + j] += g[r * w + j];
                        }
                    }
                });
            }
            Op::LogSoftmax(x) => {
                let (n, m) = rows_cols(&self.nodes[x.0].shape);
                let y = self.nodes[i].value.clone();
                self.acc(*x, |gx| {
                    for r in 0..n {
                        let s: f64 = g[r * m..(r + 1) * m].iter().sum();
                        for j in 0..m {
                            gx[r * m + j] += g[r * m + j] - y[r * m + j].exp() * s;
                        }
                    }
                });
            }
            Op::Softmax(x) => {
                let (n, m) = rows_cols(&self.nodes[x.0].shape);
                let y = self.nodes[i].value.clone();
                self.acc(*x, |gx| {
                    for r in 0..n {
                        let dot: f64 = (0..m).map(|j| g[r * m + j] * y[r * m + j]).sum();
                        for j in 0..m {
                            gx[r * m + j] += y[r * m + j] * (g[r * m + j] - dot);
                        }
                    }
                });
            }
            Op::SumRows(x) => {
                let (_, m) = rows_cols(&self.nodes[x.0].shape);
                self.acc(*x, |gx| gx.iter_mut().enumerate().for_each(|(j, o)| *o += g[j / m]));
            }
            Op::WeightedSumRows(x, w) => {
                let m = w.len();
                self.acc(*x, |gx| gx.iter_mut().enumerate().for_each(|(j, o)| *o += g[j / m] * w[j % m]));
            }
            Op::SumAll(x) => {
                let g0 = g[0];
                self.acc(*x, |gx| gx.iter_mut().for_each(|o| *o += g0));
            }
            Op::MeanAll(x) => {
                let g0 = g[0] / self.nodes[x.0].value.len() as f64;
                self.acc(*x, |gx| gx.iter_mut().for_each(|o| *o += g0));
            }
        }
        self.nodes[i].op = op;
    }
}

/// Diagonal Gaussian log density summed over the last dimension, one value
/// per row. All three inputs share a shape and are differentiable.
pub fn gaussian_log_prob(tape: &mut Tape, x: Var, mean: Var, std: Var) -> Result<Var> {
    if let Some(bad) = tape.value(std).iter().find(|s| !(**s > 0.0)) {
        return Err(Error::domain(format!("gaussian std must be positive, got {bad}")));
    }
    let diff = tape.sub(x, mean)?;
    let z = tape.div(diff, std)?;
    let z2 = tape.square(z);
    let quad = tape.scale(z2, -0.5);
    let log_std = tape.log(std);
    let t = tape.sub(quad, log_std)?;
    let t = tape.add_scalar(t, -0.5 * (2.0 * PI).ln());
    Ok(tape.sum_rows(t))
}
