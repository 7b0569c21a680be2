//! Dense double-precision tensors with a reverse-mode tape.
//!
//! Parameters live in [`Tensor`]s owned by a [`ParamSet`]. A forward pass
//! binds the parameters onto a [`Tape`] as leaves, records every primitive
//! and, after [`Tape::backward`], the bound leaves' gradients are added into
//! the owning tensors' `grad` slots.

mod nn;
mod optim;
mod tape;

pub use nn::{Activation, Mlp, MlpSpec, Norm, LAYER_NORM_EPS};
pub use optim::{clip_global_norm, clip_global_norm_sets, AdamConfig, AdamState};
pub use tape::{gaussian_log_prob, Tape, Var};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::config(format!("tensor of shape {shape:?} needs {numel} values, got {}", data.len())));
        }
        Ok(Tensor { shape, data, grad: None, requires_grad: false })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![0.0; numel], grad: None, requires_grad: false }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1], data: vec![v], grad: None, requires_grad: false }
    }

    /// Marks the tensor as a trainable parameter.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [f64]> {
        self.grad.as_deref_mut()
    }

    /// Adds `g` into the gradient slot, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[f64]) {
        debug_assert_eq!(g.len(), self.data.len());
        match &mut self.grad {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => self.grad = Some(g.to_vec()),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }
}

/// An ordered collection of parameter tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new(tensors: Vec<Tensor>) -> Self {
        ParamSet { tensors }
    }

    pub fn push(&mut self, t: Tensor) -> usize {
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Records every tensor on the tape as a leaf, in order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf_tensor(t)).collect()
    }

    /// Adds the tape gradients of `vars` into the matching tensors.
    pub fn accumulate_grads(&mut self, tape: &Tape, vars: &[Var]) {
        for (t, v) in self.tensors.iter_mut().zip(vars) {
            if !t.requires_grad {
                continue;
            }
            match tape.grad(*v) {
                Some(g) => t.accumulate_grad(g),
                None => {
                    if t.grad.is_none() {
                        t.grad = Some(vec![0.0; t.numel()]);
                    }
                }
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.tensors.iter_mut().for_each(|t| t.set_requires_grad(flag));
    }

    /// Flattened copy of all parameter values in declaration order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.numel() {
            return Err(Error::config(format!("parameter count mismatch: expected {}, got {}", self.numel(), flat.len())));
        }
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.numel();
            t.data.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.tensors.iter().map(|t| t.shape.clone()).collect()
    }
}

/// `out[n×m] += a[n×k] · b[k×m]`, four output rows at a time. Each output
/// element accumulates over `k` in ascending order.
pub(crate) fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    debug_assert!(a.len() == n * k && b.len() == k * m && out.len() == n * m);
    let mut i = 0;
    while i + 4 <= n {
        let (o0, rest) = out[i * m..(i + 4) * m].split_at_mut(m);
        let (o1, rest) = rest.split_at_mut(m);
        let (o2, o3) = rest.split_at_mut(m);
        for p in 0..k {
            let (x0, x1, x2, x3) = (a[i * k + p], a[(i + 1) * k + p], a[(i + 2) * k + p], a[(i + 3) * k + p]);
            let brow = &b[p * m..(p + 1) * m];
            for j in 0..m {
                let w = brow[j];
                o0[j] += x0 * w;
                o1[j] += x1 * w;
                o2[j] += x2 * w;
                o3[j] += x3 * w;
            }
        }
        i += 4;
    }
    for r in i..n {
        let o = &mut out[r * m..(r + 1) * m];
        for p in 0..k {
            let x = a[r * k + p];
            o.iter_mut().zip(&b[p * m..(p + 1) * m]).for_each(|(o, w)| *o += x * w);
        }
    }
}

pub(crate) fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}
