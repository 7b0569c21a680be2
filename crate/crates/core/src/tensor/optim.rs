use super::ParamSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 3e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment estimates for one [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
        AdamState { config, m: zeros.clone(), v: zeros, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.m, &self.v)
    }

    /// Restores moments and the step counter, e.g. from a checkpoint.
    pub fn restore(&mut self, m: Vec<Vec<f64>>, v: Vec<Vec<f64>>, step: u64) -> Result<()> {
        let shapes_ok = m.len() == self.m.len()
            && v.len() == self.v.len()
            && m.iter().zip(&self.m).all(|(a, b)| a.len() == b.len())
            && v.iter().zip(&self.v).all(|(a, b)| a.len() == b.len());
        if !shapes_ok {
            return Err(Error::config("Adam moment shapes do not match the parameters"));
        }
        self.m = m;
        self.v = v;
        self.step = step;
        Ok(())
    }

    /// One bias-corrected Adam update over every trainable tensor. Each
    /// trainable tensor must hold a gradient.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::config(format!("optimizer built for {} tensors, got {}", self.m.len(), params.len())));
        }
        for (i, t) in params.tensors().iter().enumerate() {
            if t.requires_grad() && t.grad().is_none() {
                return Err(Error::contract(format!("parameter tensor {i} has no gradient")));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, t) in params.tensors_mut().iter_mut().enumerate() {
            if !t.requires_grad() {
                continue;
            }
            let g = t.grad().unwrap().to_vec();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, p) in t.data_mut().iter_mut().enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(params: &mut ParamSet, max_norm: f64) -> Result<f64> {
    clip_global_norm_sets(&mut [params], max_norm)
}

/// [`clip_global_norm`] over the union of several parameter sets. Tensor
/// indices in errors count across the sets in order.
pub fn clip_global_norm_sets(sets: &mut [&mut ParamSet], max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(Error::contract(format!("max_norm must be positive, got {max_norm}")));
    }
    let mut sq = 0.0;
    let mut i = 0;
    for set in sets.iter() {
        for t in set.tensors() {
            if let Some(g) = t.grad() {
                if let Some(j) = g.iter().position(|x| !x.is_finite()) {
                    return Err(Error::numeric(format!("non-finite gradient in parameter tensor {i} at element {j}")));
                }
                sq += g.iter().map(|x| x * x).sum::<f64>();
            }
            i += 1;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for set in sets.iter_mut() {
            for t in set.tensors_mut() {
                if let Some(g) = t.grad_mut() {
                    g.iter_mut().for_each(|x| *x *= s);
                }
            }
        }
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn single(value: f64, grad: f64) -> ParamSet {
        let mut t = Tensor::new(vec![1], vec![value]).unwrap().with_grad();
        t.accumulate_grad(&[grad]);
        ParamSet::new(vec![t])
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut ps = single(1.25, 0.0);
        let mut adam = AdamState::new(AdamConfig::default(), &ps);
        adam.step(&mut ps).unwrap();
        assert_eq!(ps.tensors()[0].data(), &[1.25]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn constant_gradient_moves_against_sign() {
        let mut ps = single(0.0, 0.0);
        let mut adam = AdamState::new(AdamConfig::default(), &ps);
        let mut prev = 0.0;
        for _ in 0..200 {
            ps.zero_grad();
            ps.tensors_mut()[0].accumulate_grad(&[-3.0]);
            adam.step(&mut ps).unwrap();
            let now = ps.tensors()[0].data()[0];
            assert!(now > prev);
            prev = now;
        }
    }

    #[test]
    fn first_step_matches_hand_evaluation() {
        let g: f64 = 0.37;
        let cfg = AdamConfig::default();
        let mut ps = single(2.0, g);
        let mut adam = AdamState::new(cfg, &ps);
        adam.step(&mut ps).unwrap();
        // m = 0.1 g, v = 0.001 g^2; bias corrected mhat = g, vhat = g^2
        let expected = 2.0 - cfg.lr * g / (g.abs() + cfg.eps);
        assert!((ps.tensors()[0].data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn missing_gradient_is_contract_error() {
        let mut ps = ParamSet::new(vec![Tensor::zeros(vec![2]).with_grad()]);
        let mut adam = AdamState::new(AdamConfig::default(), &ps);
        assert!(matches!(adam.step(&mut ps), Err(Error::Contract(_))));
    }

    #[test]
    fn clip_below_threshold_is_noop() {
        let mut t = Tensor::zeros(vec![2]).with_grad();
        t.accumulate_grad(&[6.0, 8.0]);
        let mut ps = ParamSet::new(vec![t]);
        assert_eq!(clip_global_norm(&mut ps, 20.0).unwrap(), 10.0);
        assert_eq!(ps.tensors()[0].grad().unwrap(), &[6.0, 8.0]);
    }

    #[test]
    fn clip_halves_norm_40() {
        let mut t = Tensor::zeros(vec![2]).with_grad();
        t.accumulate_grad(&[24.0, 32.0]);
        let mut ps = ParamSet::new(vec![t]);
        assert_eq!(clip_global_norm(&mut ps, 20.0).unwrap(), 40.0);
        assert_eq!(ps.tensors()[0].grad().unwrap(), &[12.0, 16.0]);
    }

    #[test]
    fn clip_rejects_non_finite() {
        let mut t = Tensor::zeros(vec![2]).with_grad();
        t.accumulate_grad(&[1.0, f64::NAN]);
        let mut ps = ParamSet::new(vec![Tensor::zeros(vec![1]), t]);
        let err = clip_global_norm(&mut ps, 20.0).unwrap_err().to_string();
        assert!(err.contains("tensor 1"), "{err}");
    }
}
