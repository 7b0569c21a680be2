//! Latent world model: encoder, dynamics, reward head, Q ensemble and
//! Polyak target copies of the ensemble.

mod bins;

pub use bins::{symexp, symlog, BinSpec};

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::rng::{derive, Rng};
use crate::tensor::{Mlp, MlpSpec, ParamSet, Tape, Var};

/// Per-term coefficients of the joint model loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelLossWeights {
    pub consistency: f64,
    pub reward: f64,
    pub value: f64,
}

impl Default for ModelLossWeights {
    fn default() -> Self {
        ModelLossWeights { consistency: 20.0, reward: 0.1, value: 0.1 }
    }
}

impl ModelLossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("consistency", self.consistency), ("reward", self.reward), ("value", self.value)] {
            if !(w > 0.0) || !w.is_finite() {
                return Err(Error::config(format!("{name} loss weight must be positive, got {w}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub dynamics_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub num_q: usize,
    pub q_dropout: f64,
    pub bins: BinSpec,
    pub weights: ModelLossWeights,
    pub gamma: f64,
    /// Polyak rate: `φ' ← ρ φ' + (1 - ρ) φ`.
    pub target_rho: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            latent_dim: 64,
            encoder_hidden: vec![256, 256],
            dynamics_hidden: vec![128, 128],
            head_hidden: vec![128, 128],
            num_q: 5,
            q_dropout: 0.01,
            bins: BinSpec::default(),
            weights: ModelLossWeights::default(),
            gamma: 0.99,
            target_rho: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::config("latent dimension must be positive"));
        }
        if self.num_q < 2 {
            return Err(Error::config(format!("Q ensemble needs at least 2 members for the min-of-2 target, got {}", self.num_q)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config(format!("discount must lie in [0, 1), got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.target_rho) {
            return Err(Error::config(format!("Polyak rate must lie in [0, 1], got {}", self.target_rho)));
        }
        self.bins.validate()?;
        self.weights.validate()
    }
}

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut w = vec![input];
    w.extend_from_slice(hidden);
    w.push(output);
    w
}

/// Row-wise `[z | a]`.
pub fn concat_rows(z: &[f64], zdim: usize, a: &[f64], adim: usize) -> Vec<f64> {
    let rows = z.len() / zdim;
    let mut out = Vec::with_capacity(rows * (zdim + adim));
    for r in 0..rows {
        out.extend_from_slice(&z[r * zdim..(r + 1) * zdim]);
        out.extend_from_slice(&a[r * adim..(r + 1) * adim]);
    }
    out
}

/// `H` contiguous transitions per row: observations `s_0..s_H`, and per
/// step the executed action, reward, terminal flag and the planner's
/// first-row Gaussian. Every field is stored step-major, each step as a
/// row-major `batch × width` block.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentBatch {
    pub batch: usize,
    pub horizon: usize,
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<Vec<f64>>,
    pub terminals: Vec<Vec<bool>>,
    pub mu_mean: Vec<Vec<f64>>,
    pub mu_std: Vec<Vec<f64>>,
}

impl SegmentBatch {
    pub fn validate(&self, obs_dim: usize, action_dim: usize) -> Result<()> {
        if self.horizon == 0 || self.obs.len() < 2 {
            return Err(Error::contract("segment must hold at least two observations (one transition)"));
        }
        let h = self.horizon;
        let b = self.batch;
        let ok = self.obs.len() == h + 1
            && self.obs.iter().all(|o| o.len() == b * obs_dim)
            && [&self.actions, &self.mu_mean, &self.mu_std].iter().all(|x| x.len() == h && x.iter().all(|a| a.len() == b * action_dim))
            && self.rewards.len() == h
            && self.rewards.iter().all(|r| r.len() == b)
            && self.terminals.len() == h
            && self.terminals.iter().all(|t| t.len() == b);
        if !ok {
            return Err(Error::contract(format!(
                "segment batch is not time-aligned for batch {b}, horizon {h}, obs dim {obs_dim}, action dim {action_dim}"
            )));
        }
        Ok(())
    }
}

/// Parameters of every online network bound on one tape.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub encoder: Vec<Var>,
    pub dynamics: Vec<Var>,
    pub reward: Vec<Var>,
    pub q: Vec<Vec<Var>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ModelLossTerms {
    pub total: f64,
    pub consistency: f64,
    pub reward: f64,
    pub value: f64,
}

pub struct ModelLossOutput {
    pub loss: Var,
    pub terms: ModelLossTerms,
    pub bound: BoundModel,
    /// Rollout latents `z_0..z_H`, each `batch × latent_dim`.
    pub latents: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldModel {
    obs_dim: usize,
    action_dim: usize,
    config: ModelConfig,
    pub encoder: Mlp,
    pub dynamics: Mlp,
    pub reward: Mlp,
    pub q: Vec<Mlp>,
    pub target_q: Vec<Mlp>,
}

impl WorldModel {
    /// Fresh model. Reward and Q output layers start at zero so initial
    /// predictions decode to 0.
    pub fn new(obs_dim: usize, action_dim: usize, config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if obs_dim == 0 || action_dim == 0 {
            return Err(Error::config("observation and action dimensions must be positive"));
        }
        let mut rng = derive(seed, 0x3d);
        let l = config.latent_dim;
        let nb = config.bins.n_bins;
        let encoder = Mlp::new(MlpSpec::new(widths(obs_dim, &config.encoder_hidden, l)), 1.0, &mut rng)?;
        let dynamics = Mlp::new(MlpSpec::new(widths(l + action_dim, &config.dynamics_hidden, l)), 1.0, &mut rng)?;
        let reward = Mlp::new(MlpSpec::new(widths(l + action_dim, &config.head_hidden, nb)), 0.0, &mut rng)?;
        let q = (0..config.num_q)
            .map(|_| Mlp::new(MlpSpec::new(widths(l + action_dim, &config.head_hidden, nb)).with_dropout(config.q_dropout), 0.0, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let mut target_q = q.clone();
        target_q.iter_mut().for_each(|m| m.params_mut().set_requires_grad(false));
        Ok(WorldModel { obs_dim, action_dim, config, encoder, dynamics, reward, q, target_q })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn bins(&self) -> &BinSpec {
        &self.config.bins
    }

    pub fn gamma(&self) -> f64 {
        self.config.gamma
    }

    /// Online trainable networks in a fixed order: encoder, dynamics,
    /// reward, Q members.
    pub fn param_sets(&self) -> Vec<&ParamSet> {
        let mut v = vec![self.encoder.params(), self.dynamics.params(), self.reward.params()];
        v.extend(self.q.iter().map(Mlp::params));
        v
    }

    pub fn param_sets_mut(&mut self) -> Vec<&mut ParamSet> {
        let mut v = vec![self.encoder.params_mut(), self.dynamics.params_mut(), self.reward.params_mut()];
        v.extend(self.q.iter_mut().map(Mlp::params_mut));
        v
    }

    /// Online networks followed by the target ensemble, for checkpoints.
    pub fn all_param_sets(&self) -> Vec<&ParamSet> {
        let mut v = self.param_sets();
        v.extend(self.target_q.iter().map(Mlp::params));
        v
    }

    pub fn all_param_sets_mut(&mut self) -> Vec<&mut ParamSet> {
        let mut v = vec![self.encoder.params_mut(), self.dynamics.params_mut(), self.reward.params_mut()];
        v.extend(self.q.iter_mut().map(Mlp::params_mut));
        v.extend(self.target_q.iter_mut().map(Mlp::params_mut));
        v
    }

    fn check_rows(&self, x: &[f64], width: usize, what: &str) -> Result<usize> {
        if x.is_empty() || !x.len().is_multiple_of(width) {
            return Err(Error::config(format!("{what} of length {} is not a whole number of rows of width {width}", x.len())));
        }
        Ok(x.len() / width)
    }

    /// `z = h(s)` for row-major observations.
    pub fn encode(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let rows = self.check_rows(obs, self.obs_dim, "observation batch")?;
        Ok(self.encoder.infer(obs, rows))
    }

    /// One dynamics step `z' = d(z, a)`.
    pub fn next(&self, z: &[f64], a: &[f64]) -> Vec<f64> {
        let za = concat_rows(z, self.config.latent_dim, a, self.action_dim);
        self.dynamics.infer(&za, z.len() / self.config.latent_dim)
    }

    /// `z_1..z_H` by sequential application of the dynamics.
    pub fn latent_rollout(&self, z0: &[f64], actions: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if actions.is_empty() {
            return Err(Error::contract("rollout needs at least one action"));
        }
        let mut out = Vec::with_capacity(actions.len());
        let mut z = z0.to_vec();
        for a in actions {
            z = self.next(&z, a);
            out.push(z.clone());
        }
        Ok(out)
    }

    /// Decoded reward predictions.
    pub fn reward(&self, z: &[f64], a: &[f64]) -> Vec<f64> {
        let za = concat_rows(z, self.config.latent_dim, a, self.action_dim);
        let logits = self.reward.infer(&za, z.len() / self.config.latent_dim);
        self.config.bins.decode_logits_batch(&logits)
    }

    /// Decoded values of ensemble member `i`, online or target.
    pub fn q_member(&self, i: usize, z: &[f64], a: &[f64], target: bool) -> Vec<f64> {
        let za = concat_rows(z, self.config.latent_dim, a, self.action_dim);
        let net = if target { &self.target_q[i] } else { &self.q[i] };
        let logits = net.infer(&za, z.len() / self.config.latent_dim);
        self.config.bins.decode_logits_batch(&logits)
    }

    /// Mean of decoded online ensemble values.
    pub fn q_mean(&self, z: &[f64], a: &[f64]) -> Vec<f64> {
        let k = self.q.len() as f64;
        let mut acc = vec![0.0; z.len() / self.config.latent_dim];
        for i in 0..self.q.len() {
            acc.iter_mut().zip(self.q_member(i, z, a, false)).for_each(|(s, q)| *s += q / k);
        }
        acc
    }

    /// Two distinct ensemble members drawn uniformly.
    pub fn sample_pair(&self, rng: &mut Rng) -> (usize, usize) {
        let idx = sample(rng, self.q.len(), 2);
        (idx.index(0), idx.index(1))
    }

    /// Elementwise minimum of two decoded members.
    pub fn q_min_pair(&self, pair: (usize, usize), z: &[f64], a: &[f64], target: bool) -> Vec<f64> {
        let q1 = self.q_member(pair.0, z, a, target);
        let q2 = self.q_member(pair.1, z, a, target);
        q1.iter().zip(&q2).map(|(x, y)| x.min(*y)).collect()
    }

    /// TD targets `r + γ (1 - terminal) min_{i,j} Q'_{i,j}(z', a')` for one
    /// step, with the pair of target members drawn from `rng`.
    pub fn td_target(&self, rewards: &[f64], terminals: &[bool], z_next: &[f64], a_next: &[f64], rng: &mut Rng) -> Vec<f64> {
        let pair = self.sample_pair(rng);
        let q = self.q_min_pair(pair, z_next, a_next, true);
        td_combine(rewards, terminals, &q, self.config.gamma)
    }

    /// Online encodings of `s_1..s_H`, the states the TD targets bootstrap
    /// from.
    pub fn next_latents(&self, batch: &SegmentBatch) -> Result<Vec<Vec<f64>>> {
        batch.obs[1..].iter().map(|o| self.encode(o)).collect()
    }

    /// Binds every online network on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> BoundModel {
        BoundModel {
            encoder: self.encoder.params().bind(tape),
            dynamics: self.dynamics.params().bind(tape),
            reward: self.reward.params().bind(tape),
            q: self.q.iter().map(|m| m.params().bind(tape)).collect(),
        }
    }

    /// Adds tape gradients into the online networks.
    pub fn accumulate_grads(&mut self, tape: &Tape, bound: &BoundModel) {
        self.encoder.params_mut().accumulate_grads(tape, &bound.encoder);
        self.dynamics.params_mut().accumulate_grads(tape, &bound.dynamics);
        self.reward.params_mut().accumulate_grads(tape, &bound.reward);
        for (m, v) in self.q.iter_mut().zip(&bound.q) {
            m.params_mut().accumulate_grads(tape, v);
        }
    }

    pub fn zero_grad(&mut self) {
        self.param_sets_mut().into_iter().for_each(ParamSet::zero_grad);
    }

    /// Records the joint loss
    /// `Σ_t γ^t [c_d |d(z_t,a_t) - sg(h(s_{t+1}))|² + c_r CE(R̂_t, r_t) + c_q CE(Q̂_t, q_t)]`
    /// with `z_0 = h(s_0)` and later latents from the rollout. The squared
    /// error is averaged over latent components and the CE terms over the
    /// batch and the ensemble. `q_targets[t]` holds one TD target per row.
    pub fn model_loss(
        &self,
        tape: &mut Tape,
        batch: &SegmentBatch,
        q_targets: &[Vec<f64>],
        dropout_rng: Option<&mut Rng>,
    ) -> Result<ModelLossOutput> {
        batch.validate(self.obs_dim, self.action_dim)?;
        if q_targets.len() != batch.horizon || q_targets.iter().any(|q| q.len() != batch.batch) {
            return Err(Error::contract("one TD target per row and step is required"));
        }
        let (b, l, m) = (batch.batch, self.config.latent_dim, self.action_dim);
        let bins = &self.config.bins;
        let w = self.config.weights;
        let bound = self.bind(tape);
        let mut dropout_rng = dropout_rng;

        let s0 = tape.constant(vec![b, self.obs_dim], batch.obs[0].clone());
        let mut z = self.encoder.forward(tape, &bound.encoder, s0, None)?;
        let mut latents = vec![tape.value(z).to_vec()];
        let mut total: Option<Var> = None;
        let mut terms = ModelLossTerms::default();
        let inv_b = 1.0 / b as f64;
        let inv_k = 1.0 / self.q.len() as f64;
        for t in 0..batch.horizon {
            let discount = self.config.gamma.powi(t as i32);
            let a = tape.constant(vec![b, m], batch.actions[t].clone());
            let za = tape.concat_cols(z, a)?;

            let z_next = self.dynamics.forward(tape, &bound.dynamics, za, None)?;
            let target = tape.constant(vec![b, l], self.encode(&batch.obs[t + 1])?);
            let diff = tape.sub(z_next, target)?;
            let sq = tape.square(diff);
            let sq = tape.sum_all(sq);
            let cons = tape.scale(sq, inv_b / l as f64);

            let r_logits = self.reward.forward(tape, &bound.reward, za, None)?;
            let r_ce = cross_entropy(tape, r_logits, bins.encode_batch(&batch.rewards[t])?)?;

            let q_target = bins.encode_batch(&q_targets[t])?;
            let mut q_ce: Option<Var> = None;
            for (net, vars) in self.q.iter().zip(&bound.q) {
                let logits = net.forward(tape, vars, za, dropout_rng.as_deref_mut())?;
                let ce = cross_entropy(tape, logits, q_target.clone())?;
                q_ce = Some(match q_ce {
                    None => ce,
                    Some(acc) => tape.add(acc, ce)?,
                });
            }
            let q_ce = tape.scale(q_ce.expect("ensemble is non-empty"), inv_k);

            terms.consistency += discount * tape.scalar_value(cons);
            terms.reward += discount * tape.scalar_value(r_ce);
            terms.value += discount * tape.scalar_value(q_ce);

            let c = tape.scale(cons, w.consistency);
            let r = tape.scale(r_ce, w.reward);
            let q = tape.scale(q_ce, w.value);
            let step = tape.add(c, r)?;
            let step = tape.add(step, q)?;
            let step = tape.scale(step, discount);
            total = Some(match total {
                None => step,
                Some(acc) => tape.add(acc, step)?,
            });
            z = z_next;
            latents.push(tape.value(z).to_vec());
        }
        let loss = total.expect("horizon is positive");
        terms.total = tape.scalar_value(loss);
        Ok(ModelLossOutput { loss, terms, bound, latents })
    }

    /// Polyak update of every target member with the configured rate.
    pub fn update_targets(&mut self) -> Result<()> {
        let rho = self.config.target_rho;
        for (online, target) in self.q.iter().zip(self.target_q.iter_mut()) {
            polyak_update(online.params(), target.params_mut(), rho)?;
        }
        Ok(())
    }
}

/// `r + γ (1 - terminal) q` row by row.
pub fn td_combine(rewards: &[f64], terminals: &[bool], q_next: &[f64], gamma: f64) -> Vec<f64> {
    rewards.iter().zip(terminals).zip(q_next).map(|((r, term), q)| if *term { *r } else { r + gamma * q }).collect()
}

/// Mean over rows of `-Σ_j p_j log softmax(logits)_j`.
pub fn cross_entropy(tape: &mut Tape, logits: Var, targets: Vec<f64>) -> Result<Var> {
    let rows = tape.shape(logits)[0];
    let ls = tape.log_softmax(logits);
    let prod = tape.mul_const(ls, targets)?;
    let s = tape.sum_all(prod);
    Ok(tape.scale(s, -1.0 / rows as f64))
}

/// Every target parameter becomes `ρ·target + (1 - ρ)·online`.
pub fn polyak_update(online: &ParamSet, target: &mut ParamSet, rho: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::config(format!("Polyak rate must lie in [0, 1], got {rho}")));
    }
    if online.shapes() != target.shapes() {
        return Err(Error::config("online and target parameter shapes differ"));
    }
    for (o, t) in online.tensors().iter().zip(target.tensors_mut()) {
        for (tv, ov) in t.data_mut().iter_mut().zip(o.data()) {
            *tv = rho * *tv + (1.0 - rho) * ov;
        }
    }
    Ok(())
}
