use rand::Rng as _;

use super::{exact_policy_value, greedy_policy, h_step_plan, periodic_plan_value, PolicyTable};
use crate::envs::TabularMdp;
use crate::error::{Error, Result};
use crate::rng::{seeded, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseShape {
    /// `±ε` at every state with independent random signs.
    UniformSign,
    /// `+ε` on states valued below the median, `-ε` on the rest: pushes the
    /// estimate toward the worst states.
    AdversarialMax,
    /// `+ε` at one random state, exact elsewhere.
    Spike,
}

/// Controlled corruption of an exact value function: the result `V̂`
/// satisfies `|V̂ - V|∞ = ε` exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub magnitude: f64,
    pub shape: NoiseShape,
}

impl NoiseSpec {
    pub fn new(magnitude: f64, shape: NoiseShape) -> Result<Self> {
        if !(magnitude >= 0.0) || !magnitude.is_finite() {
            return Err(Error::config(format!("noise magnitude must be finite and >= 0, got {magnitude}")));
        }
        Ok(NoiseSpec { magnitude, shape })
    }

    pub fn apply(&self, v: &[f64], rng: &mut Rng) -> Vec<f64> {
        let eps = self.magnitude;
        match self.shape {
            NoiseShape::UniformSign => v.iter().map(|x| if rng.random::<bool>() { x + eps } else { x - eps }).collect(),
            NoiseShape::AdversarialMax => {
                let mut sorted = v.to_vec();
                sorted.sort_by(f64::total_cmp);
                let median = sorted[sorted.len() / 2];
                v.iter().map(|x| if *x < median { x + eps } else { x - eps }).collect()
            }
            NoiseShape::Spike => {
                let k = rng.random_range(0..v.len());
                let mut out = v.to_vec();
                out[k] += eps;
                out
            }
        }
    }
}

/// One iteration of approximate policy iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiIteration {
    /// Nominal policy `π_k`.
    pub policy: PolicyTable,
    /// Exact `V^{π_k}`.
    pub value: Vec<f64>,
    /// Corrupted estimate `V̂_k`.
    pub value_estimate: Vec<f64>,
    /// `π_{H,k}`: closed-loop H-step plan on `V̂_k`, one policy per stage.
    pub lookahead: Vec<PolicyTable>,
    /// Block-start value of executing `π_{H,k}` and re-planning every H
    /// steps.
    pub lookahead_value: Vec<f64>,
    /// `V^{π_{k+1}}` of the greedy improvement on `V̂_k`.
    pub next_value: Vec<f64>,
    /// `ε_k = |V̂_k - V^{π_k}|∞`.
    pub epsilon: f64,
    /// `δ_k = |V^{π_{H,k}} - V^{π_k}|∞`.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiTrace {
    pub horizon: usize,
    pub iterations: Vec<ApiIteration>,
}

pub(crate) fn sup_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Approximate policy iteration from the uniform policy: evaluate `π_k`
/// exactly, corrupt the value per `noise`, improve greedily on the
/// corrupted value and record the H-step lookahead policy alongside.
pub fn api_with_noise(mdp: &TabularMdp, noise: NoiseSpec, horizon: usize, iterations: usize, seed: u64) -> Result<ApiTrace> {
    if iterations == 0 {
        return Err(Error::config("API needs at least one iteration"));
    }
    let mut rng = seeded(seed);
    let mut policy = PolicyTable::uniform(mdp.n_states(), mdp.n_actions());
    let mut value = exact_policy_value(mdp, &policy)?;
    let mut out = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let value_estimate = noise.apply(&value, &mut rng);
        let lookahead = h_step_plan(mdp, &value_estimate, horizon)?;
        let lookahead_value = periodic_plan_value(mdp, &lookahead)?;
        let next = greedy_policy(mdp, &value_estimate);
        let next_value = exact_policy_value(mdp, &next)?;
        let epsilon = sup_norm(&value_estimate, &value);
        let delta = sup_norm(&lookahead_value, &value);
        out.push(ApiIteration {
            policy: policy.clone(),
            value: value.clone(),
            value_estimate,
            lookahead,
            lookahead_value,
            next_value: next_value.clone(),
            epsilon,
            delta,
        });
        policy = next;
        value = next_value;
    }
    Ok(ApiTrace { horizon, iterations: out })
}
