//! Checkable forms of the suboptimality, error-accumulation and
//! policy-divergence bounds. Every check evaluates both sides exactly; the
//! tabular lab plans with the true model, so model error and planner
//! suboptimality enter as zero.

use std::fmt;

use super::api::{sup_norm, ApiTrace};
use super::{exact_policy_value, expected_return, greedy_policy, optimal_value, PolicyTable};
use crate::envs::TabularMdp;
use crate::error::{Error, Result};

/// Slack allowed on `lhs <= rhs` for floating-point noise.
pub const HOLD_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundKind {
    /// H-step lookahead suboptimality, per iteration: `J* - J^{π_H} <= 2γ^H ξ / (1 - γ^H)`.
    Theorem1,
    /// Theorem 1 limsup form checked over a trace tail.
    Theorem1Limsup,
    /// Error accumulation recursion on `δ_k`.
    Theorem2,
    /// Policy divergence lower-bounded by the performance gap.
    Theorem3,
    /// Greedy policy loss `V* - V^{greedy(V̂)} <= 2γξ / (1 - γ)`.
    LemmaGreedy,
    /// API value loss limsup `<= 2γ ε / (1 - γ)^2`.
    ApiLimsup,
    /// Greedy improvement limsup `<= 2γ(1 + γ^2) ε / (1 - γ)^3`.
    GreedyLimsup,
}

impl BoundKind {
    pub fn label(self) -> &'static str {
        match self {
            BoundKind::Theorem1 => "theorem1",
            BoundKind::Theorem1Limsup => "theorem1-limsup",
            BoundKind::Theorem2 => "theorem2",
            BoundKind::Theorem3 => "theorem3",
            BoundKind::LemmaGreedy => "lemma-a2",
            BoundKind::ApiLimsup => "api-limsup",
            BoundKind::GreedyLimsup => "greedy-limsup",
        }
    }
}

impl fmt::Display for BoundKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Constants that entered a bound evaluation. Unused ones stay zero.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BoundConstants {
    pub gamma: f64,
    pub horizon: usize,
    pub r_max: f64,
    pub v_max: f64,
    pub epsilon: f64,
    pub xi: f64,
    pub eps_model: f64,
    pub eps_planner: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub kind: BoundKind,
    pub seed: u64,
    /// Iteration index within a trace, when applicable.
    pub iteration: Option<usize>,
    pub lhs: f64,
    pub rhs: f64,
    pub constants: BoundConstants,
    pub holds: bool,
}

impl BoundReport {
    pub fn new(kind: BoundKind, seed: u64, iteration: Option<usize>, lhs: f64, rhs: f64, constants: BoundConstants) -> Self {
        BoundReport { kind, seed, iteration, lhs, rhs, constants, holds: lhs <= rhs + HOLD_TOLERANCE }
    }

    pub fn slack(&self) -> f64 {
        self.rhs - self.lhs
    }

    pub const CSV_HEADER: &'static str = "theorem,seed,gamma,H,lhs,rhs,slack,holds";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:e},{:e},{:e},{}",
            self.kind,
            self.seed,
            self.constants.gamma,
            self.constants.horizon,
            self.lhs,
            self.rhs,
            self.slack(),
            self.holds
        )
    }
}

/// `C(ε_m, H, γ) = R_max Σ_{t<H} γ^t t ε_m + γ^H H ε_m V_max`.
pub fn model_error_constant(eps_model: f64, horizon: usize, gamma: f64, r_max: f64, v_max: f64) -> f64 {
    let sum: f64 = (0..horizon).map(|t| gamma.powi(t as i32) * t as f64 * eps_model).sum();
    r_max * sum + gamma.powi(horizon as i32) * horizon as f64 * eps_model * v_max
}

fn v_max(mdp: &TabularMdp) -> f64 {
    mdp.r_max() / (1.0 - mdp.gamma())
}

fn max_gap(upper: &[f64], lower: &[f64]) -> f64 {
    upper.iter().zip(lower).fold(f64::NEG_INFINITY, |m, (a, b)| m.max(a - b))
}

fn check_trace(trace: &ApiTrace) -> Result<()> {
    if trace.iterations.is_empty() {
        return Err(Error::contract("empty API trace"));
    }
    Ok(())
}

fn lookahead_report(
    mdp: &TabularMdp,
    v_star: &[f64],
    v_hat: &[f64],
    lookahead_value: &[f64],
    h: usize,
    seed: u64,
    iteration: Option<usize>,
) -> BoundReport {
    let g = mdp.gamma();
    let gh = g.powi(h as i32);
    let xi = sup_norm(v_star, v_hat);
    let c = model_error_constant(0.0, h, g, mdp.r_max(), v_max(mdp));
    let eps_planner = 0.0;
    let rhs = 2.0 / (1.0 - gh) * (c + eps_planner / 2.0 + gh * xi);
    let lhs = max_gap(v_star, lookahead_value);
    let constants = BoundConstants { gamma: g, horizon: h, r_max: mdp.r_max(), v_max: v_max(mdp), xi, ..Default::default() };
    BoundReport::new(BoundKind::Theorem1, seed, iteration, lhs, rhs, constants)
}

/// Lookahead suboptimality for a single estimate `v_hat` with exact model
/// and planner: `max_s (V* - V^{π_H}) <= 2/(1-γ^H) [C(0) + 0 + γ^H ξ]`,
/// `ξ = |V* - V̂|∞`.
pub fn check_lookahead_bound(mdp: &TabularMdp, v_star: &[f64], v_hat: &[f64], horizon: usize, seed: u64) -> Result<BoundReport> {
    let v_pi = super::h_step_plan_value(mdp, v_hat, horizon)?;
    Ok(lookahead_report(mdp, v_star, v_hat, &v_pi, horizon, seed, None))
}

/// [`check_lookahead_bound`] at every iteration of an API trace, with
/// `V̂ = V̂_k`.
pub fn check_theorem1(mdp: &TabularMdp, trace: &ApiTrace, seed: u64) -> Result<Vec<BoundReport>> {
    check_trace(trace)?;
    let v_star = optimal_value(mdp);
    Ok(trace
        .iterations
        .iter()
        .enumerate()
        .map(|(k, it)| {
            let mut r = lookahead_report(mdp, &v_star, &it.value_estimate, &it.lookahead_value, trace.horizon, seed, Some(k));
            r.constants.epsilon = it.epsilon;
            r
        })
        .collect())
}

fn tail(trace: &ApiTrace) -> &[super::ApiIteration] {
    let n = trace.iterations.len();
    let start = n - (n / 4).max(1);
    &trace.iterations[start..]
}

/// Limsup form over the last quarter of the trace:
/// `max_tail |V* - V^{π_{H,k}}|∞ <= max_tail 2/(1-γ^H) · γ^H (1+γ²)/(1-γ)² · ε_k`.
pub fn check_theorem1_limsup(mdp: &TabularMdp, trace: &ApiTrace, seed: u64) -> Result<BoundReport> {
    check_trace(trace)?;
    let v_star = optimal_value(mdp);
    let (g, h) = (mdp.gamma(), trace.horizon);
    let gh = g.powi(h as i32);
    let t = tail(trace);
    let lhs = t.iter().map(|it| sup_norm(&v_star, &it.lookahead_value)).fold(0.0, f64::max);
    let eps = t.iter().map(|it| it.epsilon).fold(0.0, f64::max);
    let rhs = 2.0 / (1.0 - gh) * (gh * (1.0 + g * g) / ((1.0 - g) * (1.0 - g)) * eps);
    let constants = BoundConstants { gamma: g, horizon: h, r_max: mdp.r_max(), v_max: v_max(mdp), epsilon: eps, ..Default::default() };
    Ok(BoundReport::new(BoundKind::Theorem1Limsup, seed, None, lhs, rhs, constants))
}

/// `max_tail |V* - V^{π_k}|∞ <= 2γ/(1-γ)² · max_tail ε_k`.
pub fn check_api_limsup(mdp: &TabularMdp, trace: &ApiTrace, seed: u64) -> Result<BoundReport> {
    check_trace(trace)?;
    let v_star = optimal_value(mdp);
    let g = mdp.gamma();
    let t = tail(trace);
    let lhs = t.iter().map(|it| sup_norm(&v_star, &it.value)).fold(0.0, f64::max);
    let eps = t.iter().map(|it| it.epsilon).fold(0.0, f64::max);
    let rhs = 2.0 * g / ((1.0 - g) * (1.0 - g)) * eps;
    let constants = BoundConstants { gamma: g, horizon: trace.horizon, r_max: mdp.r_max(), epsilon: eps, ..Default::default() };
    Ok(BoundReport::new(BoundKind::ApiLimsup, seed, None, lhs, rhs, constants))
}

/// `max_tail |V* - V^{π_{k+1}}|∞ <= 2γ(1+γ²)/(1-γ)³ · max_tail ε_k`.
pub fn check_greedy_limsup(mdp: &TabularMdp, trace: &ApiTrace, seed: u64) -> Result<BoundReport> {
    check_trace(trace)?;
    let v_star = optimal_value(mdp);
    let g = mdp.gamma();
    let t = tail(trace);
    let lhs = t.iter().map(|it| sup_norm(&v_star, &it.next_value)).fold(0.0, f64::max);
    let eps = t.iter().map(|it| it.epsilon).fold(0.0, f64::max);
    let rhs = 2.0 * g * (1.0 + g * g) / (1.0 - g).powi(3) * eps;
    let constants = BoundConstants { gamma: g, horizon: trace.horizon, r_max: mdp.r_max(), epsilon: eps, ..Default::default() };
    Ok(BoundReport::new(BoundKind::GreedyLimsup, seed, None, lhs, rhs, constants))
}

/// Error accumulation with exact model and planner:
/// `δ_k <= 1/(1-γ^H) [(1+γ^H) δ_{k-1} + 2γ(1+γ^{H-1})/(1-γ) ε_{k-1}]`
/// for every consecutive pair of the trace.
pub fn check_theorem2(trace: &ApiTrace, gamma: f64, seed: u64) -> Result<Vec<BoundReport>> {
    if trace.iterations.len() < 2 {
        return Err(Error::contract("theorem 2 needs a trace of at least two iterations"));
    }
    let h = trace.horizon;
    let gh = gamma.powi(h as i32);
    let gh1 = gamma.powi(h as i32 - 1);
    Ok(trace
        .iterations
        .windows(2)
        .enumerate()
        .map(|(k, w)| {
            let (prev, cur) = (&w[0], &w[1]);
            let rhs = 1.0 / (1.0 - gh) * ((1.0 + gh) * prev.delta + 2.0 * gamma * (1.0 + gh1) / (1.0 - gamma) * prev.epsilon);
            let constants = BoundConstants { gamma, horizon: h, epsilon: prev.epsilon, delta: prev.delta, ..Default::default() };
            BoundReport::new(BoundKind::Theorem2, seed, Some(k + 1), cur.delta, rhs, constants)
        })
        .collect())
}

/// `max_s D_TV(π'(·|s) || π(·|s)) >= (1-γ)²/(2 R_max) |J^π - J^{π'}|`,
/// reported as `lhs = gap term`, `rhs = max TV` so that `holds` keeps the
/// `lhs <= rhs` convention.
pub fn check_theorem3(mdp: &TabularMdp, pi: &PolicyTable, pi_prime: &PolicyTable, seed: u64) -> Result<BoundReport> {
    let g = mdp.gamma();
    let j = expected_return(mdp, &exact_policy_value(mdp, pi)?);
    let j_prime = expected_return(mdp, &exact_policy_value(mdp, pi_prime)?);
    let tv = pi.max_tv_distance(pi_prime);
    let gap_term = (1.0 - g) * (1.0 - g) / (2.0 * mdp.r_max()) * (j - j_prime).abs();
    let constants = BoundConstants { gamma: g, r_max: mdp.r_max(), ..Default::default() };
    Ok(BoundReport::new(BoundKind::Theorem3, seed, None, gap_term, tv, constants))
}

/// Greedy policy loss: `max_s (V* - V^{greedy(V̂)}) <= 2γξ/(1-γ)`.
pub fn check_lemma_greedy(mdp: &TabularMdp, v_hat: &[f64], seed: u64) -> Result<BoundReport> {
    if v_hat.len() != mdp.n_states() {
        return Err(Error::config("value vector length does not match |S|"));
    }
    let v_star = optimal_value(mdp);
    let g = mdp.gamma();
    let xi = sup_norm(&v_star, v_hat);
    let v_greedy = exact_policy_value(mdp, &greedy_policy(mdp, v_hat))?;
    let lhs = max_gap(&v_star, &v_greedy);
    let rhs = 2.0 * g * xi / (1.0 - g);
    let constants = BoundConstants { gamma: g, horizon: 1, r_max: mdp.r_max(), xi, ..Default::default() };
    Ok(BoundReport::new(BoundKind::LemmaGreedy, seed, None, lhs, rhs, constants))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::sample_random_mdp;
    use crate::theory::{api_with_noise, NoiseShape, NoiseSpec};

    #[test]
    fn c_constant_formula() {
        assert_eq!(model_error_constant(0.0, 3, 0.9, 1.0, 10.0), 0.0);
        // R_max (0 + γ·1 + γ²·2) ε + γ³·3·ε·V_max with γ=0.5, ε=0.1, R_max=2, V_max=4
        let expected = 2.0 * (0.5 * 0.1 + 0.25 * 2.0 * 0.1) + 0.125 * 3.0 * 0.1 * 4.0;
        assert!((model_error_constant(0.1, 3, 0.5, 2.0, 4.0) - expected).abs() < 1e-15);
    }

    #[test]
    fn exact_value_estimate_gives_zero_lookahead_loss() {
        let mdp = sample_random_mdp(7, 6, 3, 0.9, 1.0, 0.2).unwrap();
        let v = optimal_value(&mdp);
        let pi = super::super::h_step_policy(&mdp, &v, 2).unwrap();
        let vp = exact_policy_value(&mdp, &pi).unwrap();
        assert!(max_gap(&v, &vp) < 1e-9);
    }

    #[test]
    fn theorem1_h1_gamma09_rhs_18() {
        // H = 1, γ = 0.9, ξ = 1 → 2γξ/(1-γ) = 18
        let mdp = sample_random_mdp(31, 6, 3, 0.9, 1.0, 0.3).unwrap();
        let mut v_hat = optimal_value(&mdp);
        v_hat[2] += 1.0;
        let pi = super::super::h_step_policy(&mdp, &v_hat, 1).unwrap();
        let iteration = super::super::ApiIteration {
            policy: pi.clone(),
            value: exact_policy_value(&mdp, &pi).unwrap(),
            value_estimate: v_hat,
            lookahead: vec![pi.clone()],
            lookahead_value: exact_policy_value(&mdp, &pi).unwrap(),
            next_value: exact_policy_value(&mdp, &pi).unwrap(),
            epsilon: 0.0,
            delta: 0.0,
        };
        let trace = ApiTrace { horizon: 1, iterations: vec![iteration] };
        let r = &check_theorem1(&mdp, &trace, 31).unwrap()[0];
        assert!((r.rhs - 18.0).abs() < 1e-9);
        assert!(r.holds);
    }

    #[test]
    fn theorem3_identical_policies() {
        let mdp = sample_random_mdp(1, 5, 3, 0.9, 1.0, 0.0).unwrap();
        let pi = PolicyTable::uniform(5, 3);
        let r = check_theorem3(&mdp, &pi, &pi, 1).unwrap();
        assert_eq!(r.rhs, 0.0);
        assert!(r.lhs.abs() < 1e-15);
        assert!(r.holds);
    }

    #[test]
    fn theorem3_one_state_difference() {
        let mdp = sample_random_mdp(2, 5, 3, 0.9, 1.0, 0.0).unwrap();
        let a = PolicyTable::deterministic(3, &[0, 1, 2, 0, 1]);
        let b = PolicyTable::deterministic(3, &[0, 1, 0, 0, 1]);
        let r = check_theorem3(&mdp, &a, &b, 2).unwrap();
        assert_eq!(r.rhs, 1.0);
        assert!(r.lhs <= 1.0 && r.holds);
    }

    #[test]
    fn lemma_greedy_exact_and_spike() {
        let mdp = sample_random_mdp(4, 6, 3, 0.9, 1.0, 0.3).unwrap();
        let v = optimal_value(&mdp);
        let r0 = check_lemma_greedy(&mdp, &v, 4).unwrap();
        assert!(r0.lhs.abs() < 1e-9);
        let mut vh = v.clone();
        vh[0] += 0.5;
        let r = check_lemma_greedy(&mdp, &vh, 4).unwrap();
        assert!((r.rhs - 9.0).abs() < 1e-9);
        assert!(r.holds);
    }

    #[test]
    fn theorem2_holds_after_convergence() {
        let mdp = sample_random_mdp(6, 6, 3, 0.9, 1.0, 0.3).unwrap();
        let trace = api_with_noise(&mdp, NoiseSpec::new(0.0, NoiseShape::Spike).unwrap(), 2, 12, 0).unwrap();
        let reports = check_theorem2(&trace, 0.9, 6).unwrap();
        assert!(reports.iter().all(|r| r.holds));
        let last = reports.last().unwrap();
        assert!(last.lhs < 1e-9 && last.slack() >= 0.0);
        assert!(check_theorem2(&ApiTrace { horizon: 2, iterations: trace.iterations[..1].to_vec() }, 0.9, 0).is_err());
    }

    #[test]
    fn theorem2_first_pair_from_uniform() {
        let mdp = sample_random_mdp(8, 7, 3, 0.95, 1.0, 0.2).unwrap();
        let trace = api_with_noise(&mdp, NoiseSpec::new(0.2, NoiseShape::UniformSign).unwrap(), 1, 2, 8).unwrap();
        let r = &check_theorem2(&trace, 0.95, 8).unwrap()[0];
        assert_eq!(r.iteration, Some(1));
        assert!(r.holds, "{r:?}");
    }

    #[test]
    fn csv_row_has_eight_fields() {
        let r = BoundReport::new(BoundKind::Theorem2, 3, Some(1), 0.5, 1.0, BoundConstants { gamma: 0.9, horizon: 3, ..Default::default() });
        assert_eq!(r.csv_row().split(',').count(), 8);
        assert!(r.csv_row().starts_with("theorem2,3,0.9,3,"));
        assert!(r.csv_row().ends_with("true"));
    }
}
