//! Analytic environments.
//!
//! Continuous toys integrate with explicit Euler at `dt = 0.05` for
//! `T = 200` steps and emit rewards in `[0, 1]`. Tabular MDPs (random and
//! the oriented graph world) are exposed both as raw tables for the exact
//! solvers in [`crate::theory`] and as [`Env`]s with one-hot observations.

mod continuous;
mod graph;
mod tabular;

pub use continuous::{DoubleIntegrator, Pendulum, PointMassChain, DT, EPISODE_LEN};
pub use graph::{GraphStart, GraphWorld, GraphWorldConfig};
pub use tabular::{sample_random_mdp, TabularEnv, TabularMdp};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub name: String,
    pub obs_dim: usize,
    pub action_dim: usize,
    /// Episode length `T`.
    pub episode_len: usize,
    pub r_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub obs: Vec<f64>,
    pub reward: f64,
    /// Episode over, by time limit or termination.
    pub done: bool,
    /// Entered an absorbing state; values past it are not bootstrapped.
    pub terminal: bool,
}

/// A resettable environment with actions in `[-1, 1]^m`.
pub trait Env: Send {
    fn spec(&self) -> &EnvSpec;

    /// Draws a start state from the initial distribution. Deterministic in
    /// `seed`.
    fn reset(&mut self, seed: u64) -> Vec<f64>;

    /// Advances one step. Out-of-box actions are clipped and counted.
    fn step(&mut self, action: &[f64]) -> Result<Step>;

    /// Number of actions that had to be clipped into the box so far.
    fn clipped_actions(&self) -> u64;
}

pub const ENV_NAMES: [&str; 5] = ["point-mass-chain", "pendulum", "double-integrator", "graph-world", "tabular-random"];

/// Builds an environment by name. `dim` is the action dimension of
/// `point-mass-chain` (2..=16) and is ignored elsewhere; `seed` fixes the
/// tables of `tabular-random`.
pub fn make_env(name: &str, dim: usize, seed: u64) -> Result<Box<dyn Env>> {
    match name {
        "point-mass-chain" => Ok(Box::new(PointMassChain::new(dim)?)),
        "pendulum" => Ok(Box::new(Pendulum::new())),
        "double-integrator" => Ok(Box::new(DoubleIntegrator::new())),
        "graph-world" => {
            let gw = GraphWorld::new(GraphWorldConfig::default())?;
            Ok(Box::new(TabularEnv::new("graph-world", gw.mdp().clone(), 16)?))
        }
        "tabular-random" => {
            let mdp = sample_random_mdp(seed, 8, 4, 0.9, 1.0, 0.5)?;
            Ok(Box::new(TabularEnv::new("tabular-random", mdp, 50)?))
        }
        other => Err(Error::config(format!("unknown environment '{other}'; valid names: {}", ENV_NAMES.join(", ")))),
    }
}

/// Clips `action` into `[-1, 1]`, returning whether anything changed.
pub(crate) fn clip_action(action: &[f64], dim: usize) -> Result<(Vec<f64>, bool)> {
    if action.len() != dim {
        return Err(Error::config(format!("action has {} components, environment expects {dim}", action.len())));
    }
    if let Some(bad) = action.iter().find(|a| !a.is_finite()) {
        return Err(Error::domain(format!("non-finite action component {bad}")));
    }
    let clipped: Vec<f64> = action.iter().map(|a| a.clamp(-1.0, 1.0)).collect();
    let changed = clipped != action;
    Ok((clipped, changed))
}
