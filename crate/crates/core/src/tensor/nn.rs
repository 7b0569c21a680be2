use rand::Rng as _;

use super::tape::mish;
use super::{ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Mish,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    LayerNorm,
    None,
}

/// Layer widths `[input, hidden.., output]`. Hidden layers are
/// `Linear -> LayerNorm -> Mish -> Dropout`; the output layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub norm: Norm,
    pub dropout: f64,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>) -> Self {
        MlpSpec { widths, activation: Activation::Mish, norm: Norm::LayerNorm, dropout: 0.0 }
    }

    pub fn with_dropout(mut self, p: f64) -> Self {
        self.dropout = p;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 || self.widths.contains(&0) {
            return Err(Error::config(format!("MLP widths must list at least input and output, all non-zero: {:?}", self.widths)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout rate {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    fn has_norm(&self, layer: usize) -> bool {
        layer + 1 < self.layers() && self.norm == Norm::LayerNorm
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    params: ParamSet,
}

impl Mlp {
    /// Fan-in scaled uniform weights, zero biases, unit LayerNorm gains.
    /// `out_scale` multiplies the final layer's weights.
    pub fn new(spec: MlpSpec, out_scale: f64, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamSet::default();
        for l in 0..spec.layers() {
            let (fan_in, fan_out) = (spec.widths[l], spec.widths[l + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let scale = if l + 1 == spec.layers() { out_scale } else { 1.0 };
            let w: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound) * scale).collect();
            params.push(Tensor::new(vec![fan_in, fan_out], w)?.with_grad());
            params.push(Tensor::zeros(vec![fan_out]).with_grad());
            if spec.has_norm(l) {
                params.push(Tensor::new(vec![fan_out], vec![1.0; fan_out])?.with_grad());
                params.push(Tensor::zeros(vec![fan_out]).with_grad());
            }
        }
        Ok(Mlp { spec, params })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Recorded forward pass. `vars` are this network's parameters bound on
    /// `tape`; `dropout_rng` enables train-mode dropout.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], input: Var, dropout_rng: Option<&mut Rng>) -> Result<Var> {
        let in_dim = *tape.shape(input).last().unwrap_or(&0);
        if in_dim != self.spec.input_dim() {
            return Err(Error::config(format!("MLP expects input width {}, got shape {:?}", self.spec.input_dim(), tape.shape(input))));
        }
        let mut dropout_rng = dropout_rng;
        let mut h = input;
        let mut k = 0;
        for l in 0..self.spec.layers() {
            h = tape.matmul(h, vars[k])?;
            h = tape.add_bias(h, vars[k + 1])?;
            k += 2;
            if l + 1 == self.spec.layers() {
                break;
            }
            if self.spec.has_norm(l) {
                h = tape.layer_norm(h, vars[k], vars[k + 1], LAYER_NORM_EPS)?;
                k += 2;
            }
            h = match self.spec.activation {
                Activation::Mish => tape.mish(h),
            };
            if self.spec.dropout > 0.0 {
                if let Some(rng) = dropout_rng.as_deref_mut() {
                    let p = self.spec.dropout;
                    let keep = 1.0 / (1.0 - p);
                    let n = tape.value(h).len();
                    let mask = (0..n).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect();
                    h = tape.mul_const(h, mask)?;
                }
            }
        }
        Ok(h)
    }

    /// Convenience wrapper binding the parameters and running [`Mlp::forward`].
    pub fn forward_bound(&self, tape: &mut Tape, input: Var, dropout_rng: Option<&mut Rng>) -> Result<(Var, Vec<Var>)> {
        let vars = self.params.bind(tape);
        let out = self.forward(tape, &vars, input, dropout_rng)?;
        Ok((out, vars))
    }

    /// Untaped evaluation mode forward pass over `rows` inputs laid out
    /// row-major.
    pub fn infer(&self, input: &[f64], rows: usize) -> Vec<f64> {
        let t = self.params.tensors();
        let mut h = input.to_vec();
        let mut k = 0;
        for l in 0..self.spec.layers() {
            let (fi, fo) = (self.spec.widths[l], self.spec.widths[l + 1]);
            let w = t[k].data();
            let b = t[k + 1].data();
            k += 2;
            let mut out = vec![0.0; rows * fo];
            for r in 0..rows {
                out[r * fo..(r + 1) * fo].copy_from_slice(b);
            }
            super::gemm_acc(&h, w, &mut out, rows, fi, fo);
            if l + 1 < self.spec.layers() {
                if self.spec.has_norm(l) {
                    let (g, beta) = (t[k].data(), t[k + 1].data());
                    k += 2;
                    for r in 0..rows {
                        let row = &mut out[r * fo..(r + 1) * fo];
                        let mean = row.iter().sum::<f64>() / fo as f64;
                        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / fo as f64;
                        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                        for j in 0..fo {
                            row[j] = (row[j] - mean) * inv * g[j] + beta[j];
                        }
                    }
                }
                out.iter_mut().for_each(|v| *v = mish(*v));
            }
            h = out;
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn zero_single_layer_gives_zero() {
        let mut rng = seeded(0);
        let mut mlp = Mlp::new(MlpSpec::new(vec![3, 2]), 1.0, &mut rng).unwrap();
        mlp.params_mut().tensors_mut()[0].data_mut().fill(0.0);
        let mut tape = Tape::new();
        let x = tape.constant(vec![2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.5, 9.0]);
        let (y, _) = mlp.forward_bound(&mut tape, x, None).unwrap();
        assert_eq!(tape.value(y), &[0.0; 4]);
    }

    #[test]
    fn wrong_input_width_is_config_error() {
        let mut rng = seeded(0);
        let mlp = Mlp::new(MlpSpec::new(vec![3, 4, 2]), 1.0, &mut rng).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(vec![1, 5], vec![0.0; 5]);
        let err = mlp.forward_bound(&mut tape, x, None).unwrap_err().to_string();
        assert!(err.contains('3') && err.contains("[1, 5]"), "{err}");
    }

    #[test]
    fn spec_validation() {
        assert!(MlpSpec::new(vec![3]).validate().is_err());
        assert!(MlpSpec::new(vec![3, 2]).with_dropout(1.0).validate().is_err());
        assert!(MlpSpec::new(vec![3, 2]).with_dropout(0.01).validate().is_ok());
    }

    #[test]
    fn infer_matches_tape() {
        let mut rng = seeded(5);
        let mlp = Mlp::new(MlpSpec::new(vec![4, 8, 8, 3]), 1.0, &mut rng).unwrap();
        let input: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut tape = Tape::new();
        let x = tape.constant(vec![3, 4], input.clone());
        let (y, _) = mlp.forward_bound(&mut tape, x, None).unwrap();
        let direct = mlp.infer(&input, 3);
        for (a, b) in tape.value(y).iter().zip(&direct) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dropout_only_in_train_mode() {
        let mut rng = seeded(1);
        let mlp = Mlp::new(MlpSpec::new(vec![2, 64, 1]).with_dropout(0.5), 1.0, &mut rng).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(vec![1, 2], vec![0.3, -0.8]);
        let (eval, _) = mlp.forward_bound(&mut tape, x, None).unwrap();
        let mut drop_rng = seeded(2);
        let (train, _) = mlp.forward_bound(&mut tape, x, Some(&mut drop_rng)).unwrap();
        assert_eq!(tape.value(eval), mlp.infer(&[0.3, -0.8], 1).as_slice());
        assert_ne!(tape.value(eval), tape.value(train));
    }
}
