//! Nominal tanh-Gaussian policy with its constrained, unconstrained and
//! behavior-cloning updates.

use std::f64::consts::PI;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{derive, Rng};
use crate::tensor::{Mlp, MlpSpec, ParamSet, Tape, Var};
use crate::world_model::WorldModel;

fn ln_2pi_half() -> f64 {
    0.5 * (2.0 * PI).ln()
}

/// Keeps `log(1 - tanh²)` finite at saturated actions.
const SQUASH_EPS: f64 = 1e-6;
/// Sampled actions are kept this far inside the box.
const ACTION_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Max-Q with entropy bonus and the gated `−β log μ` constraint.
    Constrained,
    /// Same objective with `β = 0`.
    BaselineB0,
    /// Pure likelihood of the planner distribution.
    Bc,
}

impl Variant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "constrained" => Ok(Variant::Constrained),
            "baseline-b0" => Ok(Variant::BaselineB0),
            "bc" => Ok(Variant::Bc),
            other => Err(Error::config(format!("unknown variant '{other}' (constrained, baseline-b0, bc)"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Constrained => "constrained",
            Variant::BaselineB0 => "baseline-b0",
            Variant::Bc => "bc",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyConfig {
    pub hidden: Vec<usize>,
    pub alpha: f64,
    pub beta: f64,
    /// Per-step weight `λ^t` over the segment.
    pub lambda: f64,
    pub log_std_min: f64,
    pub log_std_max: f64,
    pub scale_threshold: f64,
    pub percentile_rate: f64,
    /// Per-dimension floor on `log μ`.
    pub log_mu_floor: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            hidden: vec![128, 128],
            alpha: 1e-4,
            beta: 1.0,
            lambda: 0.5,
            log_std_min: -10.0,
            log_std_max: 2.0,
            scale_threshold: 2.0,
            percentile_rate: 0.01,
            log_mu_floor: -20.0,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !(self.beta >= 0.0) {
            return Err(Error::config(format!("α and β must be non-negative, got α = {}, β = {}", self.alpha, self.beta)));
        }
        if !(self.log_std_min < self.log_std_max) {
            return Err(Error::config(format!("log-std bounds [{}, {}] are not ordered", self.log_std_min, self.log_std_max)));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::config(format!("horizon weight λ must lie in (0, 1], got {}", self.lambda)));
        }
        if !(self.percentile_rate > 0.0 && self.percentile_rate <= 1.0) {
            return Err(Error::config(format!("percentile EMA rate must lie in (0, 1], got {}", self.percentile_rate)));
        }
        if !(self.scale_threshold >= 0.0) {
            return Err(Error::config("scale threshold must be non-negative"));
        }
        Ok(())
    }
}

/// Exponential moving estimates of the 5th and 95th percentiles of decoded
/// Q values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleTracker {
    pub low: f64,
    pub high: f64,
    pub rate: f64,
}

impl ScaleTracker {
    pub fn new(rate: f64) -> Self {
        ScaleTracker { low: 0.0, high: 0.0, rate }
    }

    /// `S_q = high - low`.
    pub fn scale(&self) -> f64 {
        (self.high - self.low).max(0.0)
    }

    pub fn update(&mut self, values: &[f64]) -> Result<()> {
        update_tracker(self, values)
    }
}

/// Linear-interpolation percentile of sorted data, `p ∈ [0, 1]`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Moves the tracker toward the batch's 5th/95th percentiles.
pub fn update_tracker(tracker: &mut ScaleTracker, values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::contract("scale tracker needs a non-empty batch"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite Q value in scale tracker batch"));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let (lo, hi) = (percentile(&s, 0.05), percentile(&s, 0.95));
    let r = tracker.rate;
    tracker.low += r * (lo - tracker.low);
    tracker.high += r * (hi - tracker.high);
    Ok(())
}

/// `0` while `S_q` is below the threshold, the configured `β` after.
pub fn effective_beta(tracker: &ScaleTracker, config: &PolicyConfig) -> f64 {
    if tracker.scale() < config.scale_threshold {
        0.0
    } else {
        config.beta
    }
}

pub fn standard_normal(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Density of `a = tanh(u)`, `u ~ N(mean, std²)`, per dimension.
pub fn squashed_log_prob(mean: f64, std: f64, a: f64) -> f64 {
    let u = a.atanh();
    let z = (u - mean) / std;
    -0.5 * z * z - std.ln() - ln_2pi_half() - (1.0 - a * a + SQUASH_EPS).ln()
}

/// Taped policy sample.
pub struct PolicySample {
    pub action: Var,
    /// `log π(a|z)` per row.
    pub log_prob: Var,
    pub mean: Var,
    pub log_std: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TanhGaussianPolicy {
    config: PolicyConfig,
    action_dim: usize,
    pub net: Mlp,
}

impl TanhGaussianPolicy {
    pub fn new(latent_dim: usize, action_dim: usize, config: PolicyConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut widths = vec![latent_dim];
        widths.extend_from_slice(&config.hidden);
        widths.push(2 * action_dim);
        let net = Mlp::new(MlpSpec::new(widths), 1.0, &mut derive(seed, 0x90))?;
        Ok(TanhGaussianPolicy { config, action_dim, net })
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.net.spec().input_dim()
    }

    pub fn params(&self) -> &ParamSet {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        self.net.params_mut()
    }

    /// Soft clamp of a raw log-std into `[min, max]`.
    fn squash_log_std(&self, raw: f64) -> f64 {
        let (lo, hi) = (self.config.log_std_min, self.config.log_std_max);
        lo + 0.5 * (hi - lo) * (raw.tanh() + 1.0)
    }

    /// Pre-squash `(mean, log_std)` for row-major latents.
    pub fn distribution(&self, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let rows = z.len() / self.latent_dim();
        let out = self.net.infer(z, rows);
        let m = self.action_dim;
        let mut mean = Vec::with_capacity(rows * m);
        let mut log_std = Vec::with_capacity(rows * m);
        for r in out.chunks(2 * m) {
            mean.extend_from_slice(&r[..m]);
            log_std.extend(r[m..].iter().map(|x| self.squash_log_std(*x)));
        }
        (mean, log_std)
    }

    /// `tanh(mean)`: the noiseless mode action.
    pub fn mean_action(&self, z: &[f64]) -> Vec<f64> {
        let (mean, _) = self.distribution(z);
        mean.iter().map(|u| clamp_open(u.tanh())).collect()
    }

    /// Reparameterized samples `tanh(mean + std ξ)`.
    pub fn sample_action(&self, z: &[f64], rng: &mut Rng) -> Vec<f64> {
        let (mean, log_std) = self.distribution(z);
        let xi = standard_normal(rng, mean.len());
        mean.iter().zip(&log_std).zip(&xi).map(|((m, ls), e)| clamp_open((m + ls.exp() * e).tanh())).collect()
    }

    /// Recorded sample with the tanh change-of-variables correction. `z`
    /// is `rows × latent`, `noise` is `rows × action_dim`.
    pub fn sample(&self, tape: &mut Tape, vars: &[Var], z: Var, noise: Vec<f64>) -> Result<PolicySample> {
        let rows = tape.shape(z)[0];
        let m = self.action_dim;
        if noise.len() != rows * m {
            return Err(Error::contract(format!("policy noise has {} entries, expected {}", noise.len(), rows * m)));
        }
        let out = self.net.forward(tape, vars, z, None)?;
        let mean = tape.slice_cols(out, 0, m)?;
        let raw = tape.slice_cols(out, m, 2 * m)?;
        let (lo, hi) = (self.config.log_std_min, self.config.log_std_max);
        let t = tape.tanh(raw);
        let t = tape.add_scalar(t, 1.0);
        let t = tape.scale(t, 0.5 * (hi - lo));
        let log_std = tape.add_scalar(t, lo);
        let std = tape.exp(log_std);
        let xi = tape.constant(vec![rows, m], noise.clone());
        let spread = tape.mul(std, xi)?;
        let u = tape.add(mean, spread)?;
        let action = tape.tanh(u);

        let per_row_quad: Vec<f64> = noise.chunks(m).map(|r| -0.5 * r.iter().map(|e| e * e).sum::<f64>() - m as f64 * ln_2pi_half()).collect();
        let sum_log_std = tape.sum_rows(log_std);
        let gauss = tape.neg(sum_log_std);
        let quad = tape.constant(vec![rows], per_row_quad);
        let gauss = tape.add(gauss, quad)?;
        let a2 = tape.square(action);
        let one_minus = tape.neg(a2);
        let one_minus = tape.add_scalar(one_minus, 1.0 + SQUASH_EPS);
        let log_jac = tape.log(one_minus);
        let log_jac = tape.sum_rows(log_jac);
        let log_prob = tape.sub(gauss, log_jac)?;
        Ok(PolicySample { action, log_prob, mean, log_std })
    }
}

fn clamp_open(a: f64) -> f64 {
    a.clamp(-1.0 + ACTION_MARGIN, 1.0 - ACTION_MARGIN)
}

/// `Σ_d max(floor, log N(a_d; mean_d, std_d²))` per row, with the stored
/// Gaussian held constant.
pub fn behavior_log_prob(tape: &mut Tape, action: Var, mu_mean: &[f64], mu_std: &[f64], floor: f64) -> Result<Var> {
    let shape = tape.shape(action).to_vec();
    if mu_mean.len() != tape.value(action).len() || mu_std.len() != mu_mean.len() {
        return Err(Error::contract("stored behavior parameters do not match the action batch"));
    }
    if let Some(s) = mu_std.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::domain(format!("stored behavior std must be positive, got {s}")));
    }
    let mean = tape.constant(shape.clone(), mu_mean.to_vec());
    let diff = tape.sub(action, mean)?;
    let inv: Vec<f64> = mu_std.iter().map(|s| 1.0 / s).collect();
    let z = tape.mul_const(diff, inv)?;
    let z2 = tape.square(z);
    let q = tape.scale(z2, -0.5);
    let offs: Vec<f64> = mu_std.iter().map(|s| -s.ln() - ln_2pi_half()).collect();
    let offs = tape.constant(shape, offs);
    let lp = tape.add(q, offs)?;
    let lp = tape.clamp_min(lp, floor);
    Ok(tape.sum_rows(lp))
}

/// Differentiable mean of decoded online Q members at `(z, a)`, with the Q
/// parameters held constant.
pub fn q_mean_taped(tape: &mut Tape, model: &WorldModel, z: Var, action: Var) -> Result<Var> {
    let za = tape.concat_cols(z, action)?;
    let rows = tape.shape(za)[0];
    let bins = model.bins();
    let centers: Vec<f64> = (0..rows).flat_map(|_| bins.centers()).collect();
    let k = model.q.len() as f64;
    let mut acc: Option<Var> = None;
    for net in &model.q {
        let vars: Vec<Var> = net.params().tensors().iter().map(|t| tape.constant(t.shape().to_vec(), t.data().to_vec())).collect();
        let logits = net.forward(tape, &vars, za, None)?;
        let p = tape.softmax(logits);
        let y = tape.mul_const(p, centers.clone())?;
        let y = tape.sum_rows(y);
        let q = if bins.symlog { tape.symexp(y) } else { y };
        acc = Some(match acc {
            None => q,
            Some(a) => tape.add(a, q)?,
        });
    }
    Ok(tape.scale(acc.ok_or_else(|| Error::contract("empty Q ensemble"))?, 1.0 / k))
}

/// Latents and stored planner distributions for `H` steps, each step a
/// `batch × width` block.
#[derive(Debug, Clone, Copy)]
pub struct PolicyBatch<'a> {
    pub latents: &'a [Vec<f64>],
    pub mu_mean: &'a [Vec<f64>],
    pub mu_std: &'a [Vec<f64>],
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PolicyLossTerms {
    pub total: f64,
    /// Mean decoded Q of the sampled actions.
    pub q: f64,
    pub log_pi: f64,
    pub log_mu: f64,
    pub beta_eff: f64,
}

pub struct PolicyLossOutput {
    pub loss: Var,
    pub vars: Vec<Var>,
    pub terms: PolicyLossTerms,
    /// Decoded Q of every sampled action, for the scale tracker.
    pub q_values: Vec<f64>,
}

fn check_batch(policy: &TanhGaussianPolicy, batch: &PolicyBatch, noise: &[Vec<f64>]) -> Result<(usize, usize)> {
    let h = batch.latents.len();
    if h == 0 {
        return Err(Error::contract("policy loss needs at least one step"));
    }
    let l = policy.latent_dim();
    let m = policy.action_dim();
    let rows = batch.latents[0].len() / l;
    if batch.mu_mean.len() < h || batch.mu_std.len() < h {
        return Err(Error::contract(format!(
            "stored behavior parameters cover {} of {h} steps; the data predates constraint support",
            batch.mu_mean.len().min(batch.mu_std.len())
        )));
    }
    for t in 0..h {
        if batch.latents[t].len() != rows * l || batch.mu_mean[t].len() != rows * m || batch.mu_std[t].len() != rows * m {
            return Err(Error::contract(format!("policy batch step {t} is not aligned with {rows} rows")));
        }
    }
    if noise.len() != h {
        return Err(Error::contract("one noise block per step is required"));
    }
    Ok((h, rows))
}

/// `Σ_t λ^t mean_b [-Q̄(z_t,a_t)/max(1,S_q) + α log π(a_t|z_t) - β_eff log μ_t(a_t)]`
/// with `a_t = tanh(mean + std ξ_t)` and gradients flowing only into the
/// policy parameters.
pub fn policy_loss(
    policy: &TanhGaussianPolicy,
    tape: &mut Tape,
    model: &WorldModel,
    batch: &PolicyBatch,
    scale: f64,
    beta_eff: f64,
    noise: &[Vec<f64>],
) -> Result<PolicyLossOutput> {
    let (h, rows) = check_batch(policy, batch, noise)?;
    let cfg = &policy.config;
    let vars = policy.params().bind(tape);
    let q_norm = 1.0 / scale.max(1.0);
    let inv_rows = 1.0 / rows as f64;
    let mut total: Option<Var> = None;
    let mut terms = PolicyLossTerms { beta_eff, ..Default::default() };
    let mut q_values = Vec::with_capacity(h * rows);
    let mut wsum = 0.0;
    for t in 0..h {
        let w = cfg.lambda.powi(t as i32);
        wsum += w;
        let z = tape.constant(vec![rows, policy.latent_dim()], batch.latents[t].clone());
        let s = policy.sample(tape, &vars, z, noise[t].clone())?;
        let q = q_mean_taped(tape, model, z, s.action)?;
        q_values.extend_from_slice(tape.value(q));
        let mut step = tape.scale(q, -q_norm);
        if cfg.alpha > 0.0 {
            let e = tape.scale(s.log_prob, cfg.alpha);
            step = tape.add(step, e)?;
        }
        let lp_pi = tape.value(s.log_prob).iter().sum::<f64>() * inv_rows;
        let mut lp_mu = f64::NAN;
        if beta_eff > 0.0 {
            let lm = behavior_log_prob(tape, s.action, &batch.mu_mean[t], &batch.mu_std[t], cfg.log_mu_floor)?;
            lp_mu = tape.value(lm).iter().sum::<f64>() * inv_rows;
            let c = tape.scale(lm, -beta_eff);
            step = tape.add(step, c)?;
        }
        let step = tape.sum_all(step);
        let step = tape.scale(step, w * inv_rows);
        terms.q += w * tape.value(q).iter().sum::<f64>() * inv_rows;
        terms.log_pi += w * lp_pi;
        terms.log_mu += w * lp_mu;
        total = Some(match total {
            None => step,
            Some(a) => tape.add(a, step)?,
        });
    }
    terms.q /= wsum;
    terms.log_pi /= wsum;
    terms.log_mu /= wsum;
    let loss = total.expect("horizon is positive");
    terms.total = tape.scalar_value(loss);
    Ok(PolicyLossOutput { loss, vars, terms, q_values })
}

/// `Σ_t λ^t mean_b [-log μ_t(a_t)] / max(1, S_q)`, `a_t ~ π(z_t)`. The
/// decoded Q of the sampled actions is still reported for the tracker.
pub fn bc_policy_loss(
    policy: &TanhGaussianPolicy,
    tape: &mut Tape,
    model: &WorldModel,
    batch: &PolicyBatch,
    scale: f64,
    noise: &[Vec<f64>],
) -> Result<PolicyLossOutput> {
    let (h, rows) = check_batch(policy, batch, noise)?;
    let cfg = &policy.config;
    let vars = policy.params().bind(tape);
    let norm = 1.0 / scale.max(1.0);
    let inv_rows = 1.0 / rows as f64;
    let mut total: Option<Var> = None;
    let mut terms = PolicyLossTerms::default();
    let mut q_values = Vec::with_capacity(h * rows);
    let mut wsum = 0.0;
    for t in 0..h {
        let w = cfg.lambda.powi(t as i32);
        wsum += w;
        let z = tape.constant(vec![rows, policy.latent_dim()], batch.latents[t].clone());
        let s = policy.sample(tape, &vars, z, noise[t].clone())?;
        q_values.extend(model.q_mean(&batch.latents[t], tape.value(s.action)));
        let lm = behavior_log_prob(tape, s.action, &batch.mu_mean[t], &batch.mu_std[t], cfg.log_mu_floor)?;
        let lp_mu = tape.value(lm).iter().sum::<f64>() * inv_rows;
        let step = tape.sum_all(lm);
        let step = tape.scale(step, -norm * w * inv_rows);
        terms.log_mu += w * lp_mu;
        terms.log_pi += w * tape.value(s.log_prob).iter().sum::<f64>() * inv_rows;
        total = Some(match total {
            None => step,
            Some(a) => tape.add(a, step)?,
        });
    }
    terms.log_mu /= wsum;
    terms.log_pi /= wsum;
    terms.q = q_values.iter().sum::<f64>() / q_values.len() as f64;
    let loss = total.expect("horizon is positive");
    terms.total = tape.scalar_value(loss);
    Ok(PolicyLossOutput { loss, vars, terms, q_values })
}
