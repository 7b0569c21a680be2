use rand::Rng as _;
use rand_distr::{Distribution, Exp1};

use super::{clip_action, Env, EnvSpec, Step};
use crate::error::{Error, Result};
use crate::rng::seeded;

/// Explicit finite MDP `(S, A, ρ, ρ₀, r, γ)` with rewards in `[0, r_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    /// `ρ(s'|s,a)` at `(s * |A| + a) * |S| + s'`.
    transitions: Vec<f64>,
    /// `r(s,a)` at `s * |A| + a`.
    rewards: Vec<f64>,
    gamma: f64,
    r_max: f64,
    initial: Vec<f64>,
    terminal: Vec<bool>,
}

impl TabularMdp {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
        gamma: f64,
        r_max: f64,
        initial: Vec<f64>,
        terminal: Vec<bool>,
    ) -> Result<Self> {
        let mdp = TabularMdp { n_states, n_actions, transitions, rewards, gamma, r_max, initial, terminal };
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn validate(&self) -> Result<()> {
        let (ns, na) = (self.n_states, self.n_actions);
        if ns == 0 || na == 0 {
            return Err(Error::config("MDP needs at least one state and one action"));
        }
        if self.transitions.len() != ns * na * ns || self.rewards.len() != ns * na {
            return Err(Error::config("MDP table sizes do not match |S| and |A|"));
        }
        if self.initial.len() != ns || self.terminal.len() != ns {
            return Err(Error::config("initial distribution / terminal flags must have |S| entries"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::config(format!("discount must lie in (0, 1), got {}", self.gamma)));
        }
        for s in 0..ns {
            for a in 0..na {
                let row = self.row(s, a);
                let sum: f64 = row.iter().sum();
                if row.iter().any(|p| *p < 0.0) || (sum - 1.0).abs() > 1e-12 {
                    return Err(Error::config(format!("transition row ({s}, {a}) is not a distribution (sum {sum})")));
                }
                let r = self.reward(s, a);
                if !(0.0..=self.r_max).contains(&r) {
                    return Err(Error::config(format!("reward r({s}, {a}) = {r} outside [0, {}]", self.r_max)));
                }
            }
        }
        let s0: f64 = self.initial.iter().sum();
        if self.initial.iter().any(|p| *p < 0.0) || (s0 - 1.0).abs() > 1e-12 {
            return Err(Error::config(format!("initial distribution sums to {s0}")));
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn terminals(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_states).filter(|s| self.terminal[*s])
    }

    /// Successor distribution `ρ(·|s,a)`.
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let off = (s * self.n_actions + a) * self.n_states;
        &self.transitions[off..off + self.n_states]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.n_actions + a]
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        self.gamma = gamma;
        self.validate()?;
        Ok(self)
    }

    pub fn with_initial(mut self, initial: Vec<f64>) -> Result<Self> {
        self.initial = initial;
        self.validate()?;
        Ok(self)
    }

    /// Multiplies every reward (and the bound) by `c >= 0`.
    pub fn scale_rewards(mut self, c: f64) -> Result<Self> {
        self.rewards.iter_mut().for_each(|r| *r *= c);
        self.r_max *= c;
        self.validate()?;
        Ok(self)
    }

    /// True when every row is a unit vector.
    pub fn is_deterministic(&self) -> bool {
        self.transitions.chunks(self.n_states).all(|row| row.iter().filter(|p| **p != 0.0).count() == 1)
    }
}

/// Random MDP with Dirichlet(1)-like rows over a random support and
/// uniform rewards. `sparsity` in `[0, 1]` shrinks the support of each row
/// from all states (0) down to a single successor (1).
pub fn sample_random_mdp(seed: u64, n_states: usize, n_actions: usize, gamma: f64, r_max: f64, sparsity: f64) -> Result<TabularMdp> {
    if n_states < 2 || n_actions < 2 {
        return Err(Error::config(format!("random MDP needs |S| >= 2 and |A| >= 2, got {n_states} x {n_actions}")));
    }
    if !(0.0..=1.0).contains(&sparsity) {
        return Err(Error::config(format!("sparsity {sparsity} outside [0, 1]")));
    }
    let mut rng = seeded(seed);
    let support = ((1.0 - sparsity) * n_states as f64).round().max(1.0) as usize;
    let mut transitions = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        let mut idx: Vec<usize> = (0..n_states).collect();
        // partial Fisher-Yates for the support
        for i in 0..support {
            let j = rng.random_range(i..n_states);
            idx.swap(i, j);
        }
        let mut row = vec![0.0; n_states];
        let mut total = 0.0;
        for &s in &idx[..support] {
            let w: f64 = Exp1.sample(&mut rng);
            let w = w + 1e-12;
            row[s] = w;
            total += w;
        }
        row.iter_mut().for_each(|p| *p /= total);
        fix_row_sum(&mut row);
        transitions.extend(row);
    }
    let rewards = (0..n_states * n_actions).map(|_| rng.random_range(0.0..=r_max)).collect();
    let mut initial: Vec<f64> = (0..n_states).map(|_| Exp1.sample(&mut rng)).collect::<Vec<f64>>();
    let z: f64 = initial.iter().sum();
    initial.iter_mut().for_each(|p| *p /= z);
    fix_row_sum(&mut initial);
    TabularMdp::new(n_states, n_actions, transitions, rewards, gamma, r_max, initial, vec![false; n_states])
}

/// Pushes the floating-point residual of a normalized row onto its
/// largest entry.
fn fix_row_sum(row: &mut [f64]) {
    let sum: f64 = row.iter().sum();
    let (imax, _) = row.iter().enumerate().fold((0, f64::MIN), |acc, (i, p)| if *p > acc.1 { (i, *p) } else { acc });
    row[imax] += 1.0 - sum;
}

/// A [`TabularMdp`] as an [`Env`]: one-hot observations and a single
/// action dimension split into `|A|` equal bins of `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct TabularEnv {
    spec: EnvSpec,
    mdp: TabularMdp,
    state: usize,
    t: usize,
    rng: crate::rng::Rng,
    clipped: u64,
}

impl TabularEnv {
    pub fn new(name: &str, mdp: TabularMdp, episode_len: usize) -> Result<Self> {
        mdp.validate()?;
        Ok(TabularEnv {
            spec: EnvSpec { name: name.into(), obs_dim: mdp.n_states(), action_dim: 1, episode_len, r_max: mdp.r_max() },
            mdp,
            state: 0,
            t: 0,
            rng: seeded(0),
            clipped: 0,
        })
    }

    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }

    pub fn state(&self) -> usize {
        self.state
    }

    /// Discrete action for a continuous command in `[-1, 1]`.
    pub fn discretize(&self, a: f64) -> usize {
        let n = self.mdp.n_actions();
        (((a + 1.0) / 2.0 * n as f64).floor() as usize).min(n - 1)
    }

    fn obs(&self) -> Vec<f64> {
        let mut o = vec![0.0; self.mdp.n_states()];
        o[self.state] = 1.0;
        o
    }
}

fn sample_index(p: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|x| *x > 0.0).unwrap_or(p.len() - 1)
}

impl Env for TabularEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = seeded(seed);
        let u: f64 = self.rng.random();
        self.state = sample_index(self.mdp.initial(), u);
        self.t = 0;
        self.obs()
    }

    fn step(&mut self, action: &[f64]) -> Result<Step> {
        let (a, changed) = clip_action(action, 1)?;
        self.clipped += changed as u64;
        let act = self.discretize(a[0]);
        let reward = self.mdp.reward(self.state, act);
        let u: f64 = self.rng.random();
        self.state = sample_index(self.mdp.row(self.state, act), u);
        self.t += 1;
        let terminal = self.mdp.is_terminal(self.state);
        let done = terminal || self.t >= self.spec.episode_len;
        Ok(Step { obs: self.obs(), reward, done, terminal })
    }

    fn clipped_actions(&self) -> u64 {
        self.clipped
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::theory::optimal_value_with_residual;

    #[test]
    fn rows_sum_to_one() {
        let mdp = sample_random_mdp(3, 2, 2, 0.9, 1.0, 0.0).unwrap();
        for s in 0..2 {
            for a in 0..2 {
                assert!((mdp.row(s, a).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn full_sparsity_is_deterministic() {
        let mdp = sample_random_mdp(9, 6, 3, 0.9, 1.0, 1.0).unwrap();
        assert!(mdp.is_deterministic());
        assert!(!sample_random_mdp(9, 6, 3, 0.9, 1.0, 0.0).unwrap().is_deterministic());
    }

    #[test]
    fn same_seed_same_tables() {
        assert_eq!(sample_random_mdp(5, 7, 3, 0.95, 2.0, 0.3).unwrap(), sample_random_mdp(5, 7, 3, 0.95, 2.0, 0.3).unwrap());
    }

    #[test]
    fn value_iteration_contracts() {
        let mdp = sample_random_mdp(21, 8, 4, 0.9, 1.0, 0.4).unwrap();
        let (_, residual) = optimal_value_with_residual(&mdp);
        assert!(residual < 1e-10);
    }

    #[test]
    fn rejects_tiny_mdps() {
        assert!(sample_random_mdp(0, 1, 2, 0.9, 1.0, 0.0).is_err());
        assert!(sample_random_mdp(0, 2, 1, 0.9, 1.0, 0.0).is_err());
    }

    #[test]
    fn validation_catches_bad_tables() {
        let bad_row = TabularMdp::new(1, 1, vec![0.5], vec![0.0], 0.9, 1.0, vec![1.0], vec![false]);
        assert!(bad_row.is_err());
        let bad_reward = TabularMdp::new(1, 1, vec![1.0], vec![2.0], 0.9, 1.0, vec![1.0], vec![false]);
        assert!(bad_reward.is_err());
        let bad_gamma = TabularMdp::new(1, 1, vec![1.0], vec![0.0], 1.0, 1.0, vec![1.0], vec![false]);
        assert!(bad_gamma.is_err());
    }
}
