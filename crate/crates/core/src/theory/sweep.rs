use std::io::Write;

use rand::Rng as _;
use rand_distr::{Distribution, Exp1};

use super::bounds::check_lookahead_bound;
use super::{
    api_with_noise, check_api_limsup, check_greedy_limsup, check_lemma_greedy, check_theorem1_limsup, check_theorem2, check_theorem3, optimal_value,
    BoundReport, NoiseShape, NoiseSpec, PolicyTable,
};
use crate::envs::{sample_random_mdp, TabularMdp};
use crate::error::Result;
use crate::rng::{derive, Rng};

/// Random-MDP family used by the sweeps.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub n_mdps: usize,
    pub seed: u64,
    pub max_states: usize,
    pub max_actions: usize,
    pub gammas: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { n_mdps: 100, seed: 0, max_states: 8, max_actions: 4, gammas: vec![0.9, 0.99] }
    }
}

const SHAPES: [NoiseShape; 3] = [NoiseShape::UniformSign, NoiseShape::AdversarialMax, NoiseShape::Spike];

impl SweepConfig {
    pub fn with_mdps(mut self, n: usize) -> Self {
        self.n_mdps = n;
        self
    }

    /// The `i`-th MDP of the family and its seed.
    pub fn mdp(&self, i: usize) -> Result<(TabularMdp, u64)> {
        let seed = self.seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
        let mut rng = derive(seed, 0x5eed);
        let ns = rng.random_range(2..=self.max_states.max(2));
        let na = rng.random_range(2..=self.max_actions.max(2));
        let gamma = self.gammas[i % self.gammas.len()];
        let sparsity = rng.random_range(0.0..=1.0);
        Ok((sample_random_mdp(seed, ns, na, gamma, 1.0, sparsity)?, seed))
    }
}

fn random_policy(rng: &mut Rng, ns: usize, na: usize) -> PolicyTable {
    if rng.random_bool(0.3) {
        let actions: Vec<usize> = (0..ns).map(|_| rng.random_range(0..na)).collect();
        return PolicyTable::deterministic(na, &actions);
    }
    let mut probs = Vec::with_capacity(ns * na);
    for _ in 0..ns {
        let row: Vec<f64> = (0..na).map(|_| Exp1.sample(rng)).collect();
        let z: f64 = row.iter().sum();
        let mut row: Vec<f64> = row.iter().map(|x| x / z).collect();
        let err = 1.0 - row.iter().sum::<f64>();
        row[0] += err;
        probs.extend(row);
    }
    PolicyTable::new(ns, na, probs).expect("normalized rows")
}

/// Policy divergence bound over random policy pairs, one pair per MDP.
pub fn sweep_theorem3(cfg: &SweepConfig) -> Result<Vec<BoundReport>> {
    (0..cfg.n_mdps)
        .map(|i| {
            let (mdp, seed) = cfg.mdp(i)?;
            let mut rng = derive(seed, 3);
            let a = random_policy(&mut rng, mdp.n_states(), mdp.n_actions());
            let b = random_policy(&mut rng, mdp.n_states(), mdp.n_actions());
            check_theorem3(&mdp, &a, &b, seed)
        })
        .collect()
}

/// Lookahead suboptimality for `H ∈ horizons` and `ξ ∈ magnitudes` with
/// `V̂ = V* + noise`.
pub fn sweep_theorem1(cfg: &SweepConfig, horizons: &[usize], magnitudes: &[f64]) -> Result<Vec<BoundReport>> {
    let mut out = Vec::new();
    for i in 0..cfg.n_mdps {
        let (mdp, seed) = cfg.mdp(i)?;
        let v_star = optimal_value(&mdp);
        let mut rng = derive(seed, 1);
        for (j, &xi) in magnitudes.iter().enumerate() {
            let noise = NoiseSpec::new(xi, SHAPES[(i + j) % SHAPES.len()])?;
            let v_hat = noise.apply(&v_star, &mut rng);
            for &h in horizons {
                out.push(check_lookahead_bound(&mdp, &v_star, &v_hat, h, seed)?);
            }
        }
    }
    Ok(out)
}

/// Error accumulation over `iterations`-long noisy API traces.
pub fn sweep_theorem2(cfg: &SweepConfig, horizons: &[usize], iterations: usize) -> Result<Vec<BoundReport>> {
    let mut out = Vec::new();
    for i in 0..cfg.n_mdps {
        let (mdp, seed) = cfg.mdp(i)?;
        let mut rng = derive(seed, 2);
        for &h in horizons {
            let eps = rng.random_range(0.01..=1.0);
            let noise = NoiseSpec::new(eps, SHAPES[i % SHAPES.len()])?;
            let trace = api_with_noise(&mdp, noise, h, iterations, seed)?;
            out.extend(check_theorem2(&trace, mdp.gamma(), seed)?);
        }
    }
    Ok(out)
}

/// Greedy policy loss over random corruptions of `V*`.
pub fn sweep_lemma_greedy(cfg: &SweepConfig) -> Result<Vec<BoundReport>> {
    (0..cfg.n_mdps)
        .map(|i| {
            let (mdp, seed) = cfg.mdp(i)?;
            let mut rng = derive(seed, 4);
            let xi = rng.random_range(0.01..=2.0);
            let v_hat = NoiseSpec::new(xi, SHAPES[i % SHAPES.len()])?.apply(&optimal_value(&mdp), &mut rng);
            check_lemma_greedy(&mdp, &v_hat, seed)
        })
        .collect()
}

/// Tail-of-trace evidence for the asymptotic statements: lookahead
/// suboptimality, API value loss and greedy improvement loss, each over the
/// last quarter of an `iterations`-long trace.
pub fn sweep_limsup(cfg: &SweepConfig, horizons: &[usize], iterations: usize) -> Result<Vec<BoundReport>> {
    let mut out = Vec::new();
    for i in 0..cfg.n_mdps {
        let (mdp, seed) = cfg.mdp(i)?;
        let mut rng = derive(seed, 5);
        for &h in horizons {
            let noise = NoiseSpec::new(rng.random_range(0.01..=1.0), SHAPES[i % SHAPES.len()])?;
            let trace = api_with_noise(&mdp, noise, h, iterations, seed)?;
            out.push(check_theorem1_limsup(&mdp, &trace, seed)?);
            out.push(check_api_limsup(&mdp, &trace, seed)?);
            out.push(check_greedy_limsup(&mdp, &trace, seed)?);
        }
    }
    Ok(out)
}

/// One CSV row per report under [`BoundReport::CSV_HEADER`].
pub fn write_reports_csv<W: Write>(mut w: W, reports: &[BoundReport]) -> Result<()> {
    writeln!(w, "{}", BoundReport::CSV_HEADER)?;
    for r in reports {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}
