//! MPPI over latent action sequences.

use crate::error::{Error, Result};
use crate::policy::{standard_normal, TanhGaussianPolicy};
use crate::rng::{seeded, Rng};
use crate::world_model::WorldModel;

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerConfig {
    pub iterations: usize,
    pub samples: usize,
    pub elites: usize,
    pub policy_rollouts: usize,
    pub horizon: usize,
    pub std_min: f64,
    pub std_max: f64,
    /// Elite weight temperature `τ_w`.
    pub temperature: f64,
    pub action_low: f64,
    pub action_high: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            iterations: 6,
            samples: 512,
            elites: 64,
            policy_rollouts: 24,
            horizon: 3,
            std_min: 0.05,
            std_max: 2.0,
            temperature: 0.5,
            action_low: -1.0,
            action_high: 1.0,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.iterations == 0 {
            return Err(Error::config("planner horizon and iterations must be at least 1"));
        }
        if self.elites == 0 || self.elites > self.samples {
            return Err(Error::config(format!("need 1 <= elites ({}) <= samples ({})", self.elites, self.samples)));
        }
        if self.policy_rollouts + 2 > self.samples {
            return Err(Error::config(format!(
                "samples ({}) must leave room for {} policy rollouts plus the carried mean and elite",
                self.samples, self.policy_rollouts
            )));
        }
        if !(0.0 < self.std_min && self.std_min < self.std_max) {
            return Err(Error::config(format!("need 0 < std_min ({}) < std_max ({})", self.std_min, self.std_max)));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::config("elite temperature must be positive"));
        }
        if !(self.action_low < self.action_high) {
            return Err(Error::config("action bounds are not ordered"));
        }
        Ok(())
    }
}

/// Diagonal Gaussian over an `H × m` action sequence, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanDistribution {
    pub horizon: usize,
    pub action_dim: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl PlanDistribution {
    pub fn cold(horizon: usize, action_dim: usize, std_max: f64) -> Self {
        PlanDistribution { horizon, action_dim, mean: vec![0.0; horizon * action_dim], std: vec![std_max; horizon * action_dim] }
    }

    pub fn first_mean(&self) -> &[f64] {
        &self.mean[..self.action_dim]
    }

    pub fn first_std(&self) -> &[f64] {
        &self.std[..self.action_dim]
    }
}

/// Mean rows move one step earlier, the last row becomes zero and every
/// std resets to `std_max`.
pub fn shift_warm_start(prev: &PlanDistribution, std_max: f64) -> PlanDistribution {
    let m = prev.action_dim;
    let mut mean = vec![0.0; prev.mean.len()];
    if prev.horizon > 1 {
        mean[..(prev.horizon - 1) * m].copy_from_slice(&prev.mean[m..]);
    }
    PlanDistribution { horizon: prev.horizon, action_dim: m, mean, std: vec![std_max; prev.std.len()] }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub distribution: PlanDistribution,
    pub action: Vec<f64>,
    /// Weighted mean of the final elite returns.
    pub elite_return: f64,
    /// Best elite return after each iteration.
    pub best_per_iteration: Vec<f64>,
}

/// What the planner needs from a learned model: batched latent dynamics,
/// rewards, a terminal value and the nominal policy.
pub trait PlanningModel {
    fn latent_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn gamma(&self) -> f64;
    fn next(&self, z: &[f64], a: &[f64]) -> Vec<f64>;
    fn reward(&self, z: &[f64], a: &[f64]) -> Vec<f64>;
    /// `V̂(z)` per row.
    fn terminal_value(&self, z: &[f64], rng: &mut Rng) -> Vec<f64>;
    /// Noiseless nominal-policy action per row.
    fn policy_mode(&self, z: &[f64]) -> Vec<f64>;
}

/// A world model paired with its nominal policy.
#[derive(Clone, Copy)]
pub struct LearnedModel<'a> {
    pub model: &'a WorldModel,
    pub policy: &'a TanhGaussianPolicy,
}

impl PlanningModel for LearnedModel<'_> {
    fn latent_dim(&self) -> usize {
        self.model.latent_dim()
    }

    fn action_dim(&self) -> usize {
        self.model.action_dim()
    }

    fn gamma(&self) -> f64 {
        self.model.gamma()
    }

    fn next(&self, z: &[f64], a: &[f64]) -> Vec<f64> {
        self.model.next(z, a)
    }

    fn reward(&self, z: &[f64], a: &[f64]) -> Vec<f64> {
        self.model.reward(z, a)
    }

    /// Min of two random online members at `a' ~ π(z)`.
    fn terminal_value(&self, z: &[f64], rng: &mut Rng) -> Vec<f64> {
        let a = self.policy.sample_action(z, rng);
        let pair = self.model.sample_pair(rng);
        self.model.q_min_pair(pair, z, &a, false)
    }

    fn policy_mode(&self, z: &[f64]) -> Vec<f64> {
        self.policy.mean_action(z)
    }
}

/// `G = Σ_h γ^h r(z_h, a_h) + γ^H V̂(z_H)` for every row of `z0`, with
/// `actions[h]` holding one action per row.
pub fn estimate_return<M: PlanningModel + ?Sized>(model: &M, z0: &[f64], actions: &[Vec<f64>], rng: &mut Rng) -> Result<Vec<f64>> {
    if actions.is_empty() {
        return Err(Error::contract("return estimate needs at least one action"));
    }
    let rows = z0.len() / model.latent_dim();
    let g = model.gamma();
    let mut z = z0.to_vec();
    let mut ret = vec![0.0; rows];
    let mut disc = 1.0;
    for a in actions {
        if a.len() != rows * model.action_dim() {
            return Err(Error::contract("action block does not match the latent batch"));
        }
        let r = model.reward(&z, a);
        ret.iter_mut().zip(&r).for_each(|(s, r)| *s += disc * r);
        z = model.next(&z, a);
        disc *= g;
    }
    let v = model.terminal_value(&z, rng);
    ret.iter_mut().zip(&v).for_each(|(s, v)| *s += disc * v);
    Ok(ret)
}

/// MPPI from a single latent state `z`. `explore` samples the returned
/// first action from the final distribution; otherwise the mean is used.
pub fn plan<M: PlanningModel + ?Sized>(
    model: &M,
    z: &[f64],
    warm_start: Option<&PlanDistribution>,
    config: &PlannerConfig,
    seed: u64,
    explore: bool,
) -> Result<PlanResult> {
    config.validate()?;
    let (h, m, l) = (config.horizon, model.action_dim(), model.latent_dim());
    if z.len() != l {
        return Err(Error::contract(format!("planner expects one latent of width {l}, got {} values", z.len())));
    }
    let mut dist = match warm_start {
        Some(w) if w.horizon == h && w.action_dim == m => w.clone(),
        Some(_) => return Err(Error::contract("warm start does not match the planner horizon/action shape")),
        None => PlanDistribution::cold(h, m, config.std_max),
    };
    let mut rng = seeded(seed);
    let (lo, hi) = (config.action_low, config.action_high);
    let n = config.samples;
    let p = config.policy_rollouts;

    // Policy rollouts are fixed across iterations.
    let mut policy_seq = vec![vec![0.0; p * m]; h];
    if p > 0 {
        let mut zp = vec![0.0; p * l];
        zp.chunks_mut(l).for_each(|r| r.copy_from_slice(z));
        for step in policy_seq.iter_mut() {
            let a: Vec<f64> = model.policy_mode(&zp).iter().map(|x| x.clamp(lo, hi)).collect();
            zp = model.next(&zp, &a);
            *step = a;
        }
    }
    let mut z_rep = vec![0.0; n * l];
    z_rep.chunks_mut(l).for_each(|r| r.copy_from_slice(z));

    let mut carried: Option<(Vec<f64>, f64)> = None;
    let mut best_per_iteration = Vec::with_capacity(config.iterations);
    let mut elite_return = f64::NAN;
    for _ in 0..config.iterations {
        // Candidate layout per step: [policy | previous mean | carried elite | gaussian].
        let mut seqs = vec![vec![0.0; n * m]; h];
        for t in 0..h {
            seqs[t][..p * m].copy_from_slice(&policy_seq[t]);
            seqs[t][p * m..(p + 1) * m].copy_from_slice(&dist.mean[t * m..(t + 1) * m]);
            let noise = standard_normal(&mut rng, (n - p - 1) * m);
            for (k, e) in noise.iter().enumerate() {
                let d = k % m;
                let mu = dist.mean[t * m + d];
                let sd = dist.std[t * m + d];
                seqs[t][(p + 1) * m + k] = (mu + sd * e).clamp(lo, hi);
            }
        }
        let carry_slot = p + 1;
        if let Some((seq, _)) = &carried {
            for t in 0..h {
                seqs[t][carry_slot * m..(carry_slot + 1) * m].copy_from_slice(&seq[t * m..(t + 1) * m]);
            }
        }
        let mut scores = estimate_return(model, &z_rep, &seqs, &mut rng)?;
        if let Some((_, s)) = &carried {
            scores[carry_slot] = *s;
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::numeric(format!("non-finite return estimate {} for planner sample {i}", scores[i])));
        }

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|a, b| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b)));
        let elites = &order[..config.elites];
        let gmax = scores[elites[0]];
        let w: Vec<f64> = elites.iter().map(|i| ((scores[*i] - gmax) / config.temperature).exp()).collect();
        let wsum: f64 = w.iter().sum();
        let w: Vec<f64> = w.iter().map(|x| x / wsum).collect();

        for t in 0..h {
            for d in 0..m {
                let col = |i: usize| seqs[t][i * m + d];
                let mu: f64 = elites.iter().zip(&w).map(|(i, wi)| wi * col(*i)).sum();
                let var: f64 = elites.iter().zip(&w).map(|(i, wi)| wi * (col(*i) - mu) * (col(*i) - mu)).sum();
                dist.mean[t * m + d] = mu.clamp(lo, hi);
                dist.std[t * m + d] = var.sqrt().clamp(config.std_min, config.std_max);
            }
        }
        elite_return = elites.iter().zip(&w).map(|(i, wi)| wi * scores[*i]).sum();
        best_per_iteration.push(gmax);
        let best: Vec<f64> = (0..h).flat_map(|t| seqs[t][elites[0] * m..(elites[0] + 1) * m].to_vec()).collect();
        carried = Some((best, gmax));
    }

    let action: Vec<f64> = if explore {
        let e = standard_normal(&mut rng, m);
        (0..m).map(|d| (dist.mean[d] + dist.std[d] * e[d]).clamp(lo, hi)).collect()
    } else {
        dist.first_mean().to_vec()
    };
    Ok(PlanResult { distribution: dist, action, elite_return, best_per_iteration })
}
