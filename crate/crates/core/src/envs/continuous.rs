use std::f64::consts::PI;

use rand::Rng as _;

use super::{clip_action, Env, EnvSpec, Step};
use crate::error::{Error, Result};
use crate::rng::seeded;

pub const DT: f64 = 0.05;
pub const EPISODE_LEN: usize = 200;

/// `d`-dimensional double integrator driven toward a unit-norm goal.
/// Observation is `[pos, vel]`; reward `exp(-|pos - goal|^2)`.
#[derive(Debug, Clone)]
pub struct PointMassChain {
    spec: EnvSpec,
    goal: Vec<f64>,
    pos: Vec<f64>,
    vel: Vec<f64>,
    t: usize,
    clipped: u64,
}

impl PointMassChain {
    pub fn new(dim: usize) -> Result<Self> {
        if !(2..=16).contains(&dim) {
            return Err(Error::config(format!("point-mass-chain dimension must be in 2..=16, got {dim}")));
        }
        let g = 1.0 / (dim as f64).sqrt();
        Ok(PointMassChain {
            spec: EnvSpec { name: "point-mass-chain".into(), obs_dim: 2 * dim, action_dim: dim, episode_len: EPISODE_LEN, r_max: 1.0 },
            goal: vec![g; dim],
            pos: vec![0.0; dim],
            vel: vec![0.0; dim],
            t: 0,
            clipped: 0,
        })
    }

    pub fn goal(&self) -> &[f64] {
        &self.goal
    }

    /// Places the mass at `pos` with velocity `vel`.
    pub fn set_state(&mut self, pos: &[f64], vel: &[f64]) {
        self.pos.copy_from_slice(pos);
        self.vel.copy_from_slice(vel);
    }

    fn obs(&self) -> Vec<f64> {
        self.pos.iter().chain(&self.vel).copied().collect()
    }
}

impl Env for PointMassChain {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        self.pos.fill(0.0);
        self.vel.fill(0.0);
        self.t = 0;
        self.obs()
    }

    fn step(&mut self, action: &[f64]) -> Result<Step> {
        let (a, changed) = clip_action(action, self.spec.action_dim)?;
        self.clipped += changed as u64;
        for i in 0..a.len() {
            self.pos[i] += self.vel[i] * DT;
            self.vel[i] += a[i] * DT;
        }
        self.t += 1;
        let d2: f64 = self.pos.iter().zip(&self.goal).map(|(p, g)| (p - g) * (p - g)).sum();
        Ok(Step { obs: self.obs(), reward: (-d2).exp(), done: self.t >= self.spec.episode_len, terminal: false })
    }

    fn clipped_actions(&self) -> u64 {
        self.clipped
    }
}

/// Torque-limited pendulum; angle 0 is upright. Observation
/// `[cos θ, sin θ, ω]`, reward `(1 + cos θ) / 2`.
#[derive(Debug, Clone)]
pub struct Pendulum {
    spec: EnvSpec,
    theta: f64,
    omega: f64,
    t: usize,
    clipped: u64,
}

impl Pendulum {
    pub const GRAVITY: f64 = 10.0;
    pub const LENGTH: f64 = 1.0;
    pub const MASS: f64 = 1.0;
    pub const MAX_TORQUE: f64 = 2.0;
    pub const MAX_SPEED: f64 = 8.0;

    pub fn new() -> Self {
        Pendulum {
            spec: EnvSpec { name: "pendulum".into(), obs_dim: 3, action_dim: 1, episode_len: EPISODE_LEN, r_max: 1.0 },
            theta: 0.0,
            omega: 0.0,
            t: 0,
            clipped: 0,
        }
    }

    pub fn state(&self) -> (f64, f64) {
        (self.theta, self.omega)
    }

    pub fn set_state(&mut self, theta: f64, omega: f64) {
        self.theta = theta;
        self.omega = omega;
    }

    fn obs(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.omega]
    }
}

impl Default for Pendulum {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for Pendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = seeded(seed);
        self.theta = rng.random_range(-PI..PI);
        self.omega = rng.random_range(-1.0..1.0);
        self.t = 0;
        self.obs()
    }

    fn step(&mut self, action: &[f64]) -> Result<Step> {
        let (a, changed) = clip_action(action, 1)?;
        self.clipped += changed as u64;
        let torque = a[0] * Self::MAX_TORQUE;
        let accel = 3.0 * Self::GRAVITY / (2.0 * Self::LENGTH) * self.theta.sin() + 3.0 / (Self::MASS * Self::LENGTH * Self::LENGTH) * torque;
        let theta = self.theta + self.omega * DT;
        let omega = (self.omega + accel * DT).clamp(-Self::MAX_SPEED, Self::MAX_SPEED);
        self.theta = (theta + PI).rem_euclid(2.0 * PI) - PI;
        self.omega = omega;
        self.t += 1;
        let reward = 0.5 * (1.0 + self.theta.cos());
        Ok(Step { obs: self.obs(), reward, done: self.t >= self.spec.episode_len, terminal: false })
    }

    fn clipped_actions(&self) -> u64 {
        self.clipped
    }
}

/// One-dimensional double integrator with a random start position,
/// reward `exp(-x^2)`.
#[derive(Debug, Clone)]
pub struct DoubleIntegrator {
    spec: EnvSpec,
    x: f64,
    v: f64,
    t: usize,
    clipped: u64,
}

impl DoubleIntegrator {
    pub fn new() -> Self {
        DoubleIntegrator {
            spec: EnvSpec { name: "double-integrator".into(), obs_dim: 2, action_dim: 1, episode_len: EPISODE_LEN, r_max: 1.0 },
            x: 0.0,
            v: 0.0,
            t: 0,
            clipped: 0,
        }
    }

    pub fn set_state(&mut self, x: f64, v: f64) {
        self.x = x;
        self.v = v;
    }
}

impl Default for DoubleIntegrator {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for DoubleIntegrator {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = seeded(seed);
        self.x = rng.random_range(-1.0..1.0);
        self.v = 0.0;
        self.t = 0;
        vec![self.x, self.v]
    }

    fn step(&mut self, action: &[f64]) -> Result<Step> {
        let (a, changed) = clip_action(action, 1)?;
        self.clipped += changed as u64;
        self.x += self.v * DT;
        self.v += a[0] * DT;
        self.t += 1;
        Ok(Step { obs: vec![self.x, self.v], reward: (-self.x * self.x).exp(), done: self.t >= self.spec.episode_len, terminal: false })
    }

    fn clipped_actions(&self) -> u64 {
        self.clipped
    }
}
