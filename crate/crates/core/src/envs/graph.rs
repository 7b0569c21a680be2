use super::TabularMdp;
use crate::error::{Error, Result};

/// Six-node oriented graph with two absorbing terminals.
///
/// ```text
///   L --a0--> G (good, reward 10)      R --a0--> P
///   L --a1--> P (poor)                 R --a1--> A
///   A --a0--> G    A --a1--> B         B --a0--> P    B --a1--> L
/// ```
///
/// Rewards are paid on entering a node. Terminal nodes loop on themselves
/// with zero reward, so their true value is 0.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphWorld {
    config: GraphWorldConfig,
    mdp: TabularMdp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphStart {
    Left,
    Right,
    /// Uniform over both start nodes.
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphWorldConfig {
    pub good_reward: f64,
    pub poor_reward: f64,
    pub intermediate_reward: f64,
    pub gamma: f64,
    pub start: GraphStart,
}

impl Default for GraphWorldConfig {
    fn default() -> Self {
        // poor_reward sits just below the discounted value of the good branch
        // seen from R (γ · 10 = 9.9), so a small overestimate of P flips R's
        // 1-step choice while L still prefers G.
        GraphWorldConfig { good_reward: 10.0, poor_reward: 9.45, intermediate_reward: 0.0, gamma: 0.99, start: GraphStart::Both }
    }
}

impl GraphWorld {
    pub const LEFT: usize = 0;
    pub const RIGHT: usize = 1;
    pub const A: usize = 2;
    pub const B: usize = 3;
    pub const GOOD: usize = 4;
    pub const POOR: usize = 5;
    pub const N_STATES: usize = 6;
    pub const N_ACTIONS: usize = 2;

    /// `succ[s][a]` for the non-terminal nodes.
    const EDGES: [[usize; 2]; 4] = [[Self::GOOD, Self::POOR], [Self::POOR, Self::A], [Self::GOOD, Self::B], [Self::POOR, Self::LEFT]];

    pub fn new(config: GraphWorldConfig) -> Result<Self> {
        let rewards_ok = [config.good_reward, config.poor_reward, config.intermediate_reward].iter().all(|r| *r >= 0.0 && r.is_finite());
        if !rewards_ok {
            return Err(Error::config("graph world rewards must be finite and non-negative"));
        }
        let (ns, na) = (Self::N_STATES, Self::N_ACTIONS);
        let label = |s: usize| match s {
            Self::GOOD => config.good_reward,
            Self::POOR => config.poor_reward,
            _ => config.intermediate_reward,
        };
        let mut transitions = vec![0.0; ns * na * ns];
        let mut rewards = vec![0.0; ns * na];
        for s in 0..ns {
            for a in 0..na {
                let next = if s < Self::EDGES.len() { Self::EDGES[s][a] } else { s };
                transitions[(s * na + a) * ns + next] = 1.0;
                rewards[s * na + a] = if s < Self::EDGES.len() { label(next) } else { 0.0 };
            }
        }
        let r_max = config.good_reward.max(config.poor_reward).max(config.intermediate_reward).max(f64::MIN_POSITIVE);
        let mut initial = vec![0.0; ns];
        match config.start {
            GraphStart::Left => initial[Self::LEFT] = 1.0,
            GraphStart::Right => initial[Self::RIGHT] = 1.0,
            GraphStart::Both => {
                initial[Self::LEFT] = 0.5;
                initial[Self::RIGHT] = 0.5;
            }
        }
        let mut terminal = vec![false; ns];
        terminal[Self::GOOD] = true;
        terminal[Self::POOR] = true;
        let mdp = TabularMdp::new(ns, na, transitions, rewards, config.gamma, r_max, initial, terminal)?;
        Ok(GraphWorld { config, mdp })
    }

    pub fn config(&self) -> &GraphWorldConfig {
        &self.config
    }

    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }

    pub fn successor(&self, s: usize, a: usize) -> usize {
        self.mdp.row(s, a).iter().position(|p| *p == 1.0).expect("graph world is deterministic")
    }
}
