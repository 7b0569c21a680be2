use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::envs::make_env;
use crate::error::{Error, Result};
use crate::planner::PlannerConfig;
use crate::policy::{PolicyConfig, Variant};
use crate::tensor::AdamConfig;
use crate::world_model::ModelConfig;

/// Everything a training run needs. Serialized as flat `key = value` text
/// with module-namespaced keys.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub env_name: String,
    pub env_dim: usize,
    pub seed: u64,
    /// Planner-driven environment steps after pretraining.
    pub steps: usize,
    pub batch_size: usize,
    /// Training updates per collected environment step.
    pub update_ratio: usize,
    pub pretrain_steps: usize,
    pub pretrain_updates: usize,
    pub buffer_capacity: usize,
    pub log_interval: usize,
    /// Checkpoint at the first episode end after every this many steps;
    /// 0 disables.
    pub checkpoint_interval: usize,
    pub grad_clip: f64,
    pub adam: AdamConfig,
    /// Nominal-policy episodes for the true-value estimate.
    pub eval_episodes: usize,
    /// Planner episodes for the evaluation return.
    pub eval_planner_episodes: usize,
    /// Initial states for the value estimate.
    pub value_samples: usize,
    pub variant: Variant,
    pub model: ModelConfig,
    pub planner: PlannerConfig,
    pub policy: PolicyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            env_name: "point-mass-chain".into(),
            env_dim: 8,
            seed: 0,
            steps: 100_000,
            batch_size: 256,
            update_ratio: 1,
            pretrain_steps: 1000,
            pretrain_updates: 1000,
            buffer_capacity: 100_000,
            log_interval: 1000,
            checkpoint_interval: 0,
            grad_clip: 20.0,
            adam: AdamConfig::default(),
            eval_episodes: 20,
            eval_planner_episodes: 2,
            value_samples: 64,
            variant: Variant::Constrained,
            model: ModelConfig::default(),
            planner: PlannerConfig::default(),
            policy: PolicyConfig::default(),
        }
    }
}

fn list<T: Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn parse<T: FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("invalid value '{v}' for {key}"))
}

fn parse_list(key: &str, v: &str) -> std::result::Result<Vec<usize>, String> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| parse(key, x.trim())).collect()
}

impl RunConfig {
    /// `(key, value)` pairs in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let m = &self.model;
        let p = &self.planner;
        let q = &self.policy;
        vec![
            ("env.name", self.env_name.clone()),
            ("env.dim", self.env_dim.to_string()),
            ("run.seed", self.seed.to_string()),
            ("run.steps", self.steps.to_string()),
            ("run.batch_size", self.batch_size.to_string()),
            ("run.update_ratio", self.update_ratio.to_string()),
            ("run.pretrain_steps", self.pretrain_steps.to_string()),
            ("run.pretrain_updates", self.pretrain_updates.to_string()),
            ("run.buffer_capacity", self.buffer_capacity.to_string()),
            ("run.log_interval", self.log_interval.to_string()),
            ("run.checkpoint_interval", self.checkpoint_interval.to_string()),
            ("run.grad_clip", self.grad_clip.to_string()),
            ("run.variant", self.variant.name().to_string()),
            ("optim.lr", self.adam.lr.to_string()),
            ("optim.beta1", self.adam.beta1.to_string()),
            ("optim.beta2", self.adam.beta2.to_string()),
            ("optim.eps", self.adam.eps.to_string()),
            ("eval.episodes", self.eval_episodes.to_string()),
            ("eval.planner_episodes", self.eval_planner_episodes.to_string()),
            ("eval.value_samples", self.value_samples.to_string()),
            ("model.latent_dim", m.latent_dim.to_string()),
            ("model.encoder_hidden", list(&m.encoder_hidden)),
            ("model.dynamics_hidden", list(&m.dynamics_hidden)),
            ("model.head_hidden", list(&m.head_hidden)),
            ("model.num_q", m.num_q.to_string()),
            ("model.q_dropout", m.q_dropout.to_string()),
            ("model.gamma", m.gamma.to_string()),
            ("model.target_rho", m.target_rho.to_string()),
            ("bins.count", m.bins.n_bins.to_string()),
            ("bins.vmin", m.bins.vmin.to_string()),
            ("bins.vmax", m.bins.vmax.to_string()),
            ("bins.symlog", m.bins.symlog.to_string()),
            ("loss.consistency", m.weights.consistency.to_string()),
            ("loss.reward", m.weights.reward.to_string()),
            ("loss.value", m.weights.value.to_string()),
            ("planner.iterations", p.iterations.to_string()),
            ("planner.samples", p.samples.to_string()),
            ("planner.elites", p.elites.to_string()),
            ("planner.policy_rollouts", p.policy_rollouts.to_string()),
            ("planner.horizon", p.horizon.to_string()),
            ("planner.std_min", p.std_min.to_string()),
            ("planner.std_max", p.std_max.to_string()),
            ("planner.temperature", p.temperature.to_string()),
            ("policy.hidden", list(&q.hidden)),
            ("policy.alpha", q.alpha.to_string()),
            ("policy.beta", q.beta.to_string()),
            ("policy.lambda", q.lambda.to_string()),
            ("policy.log_std_min", q.log_std_min.to_string()),
            ("policy.log_std_max", q.log_std_max.to_string()),
            ("policy.scale_threshold", q.scale_threshold.to_string()),
            ("policy.percentile_rate", q.percentile_rate.to_string()),
            ("policy.log_mu_floor", q.log_mu_floor.to_string()),
        ]
    }

    /// Sets one key. Unknown keys and malformed values are errors.
    pub fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let v = v.trim();
        match key {
            "env.name" => self.env_name = v.to_string(),
            "env.dim" => self.env_dim = parse(key, v)?,
            "run.seed" => self.seed = parse(key, v)?,
            "run.steps" => self.steps = parse(key, v)?,
            "run.batch_size" => self.batch_size = parse(key, v)?,
            "run.update_ratio" => self.update_ratio = parse(key, v)?,
            "run.pretrain_steps" => self.pretrain_steps = parse(key, v)?,
            "run.pretrain_updates" => self.pretrain_updates = parse(key, v)?,
            "run.buffer_capacity" => self.buffer_capacity = parse(key, v)?,
            "run.log_interval" => self.log_interval = parse(key, v)?,
            "run.checkpoint_interval" => self.checkpoint_interval = parse(key, v)?,
            "run.grad_clip" => self.grad_clip = parse(key, v)?,
            "run.variant" => self.variant = Variant::parse(v).map_err(|e| e.to_string())?,
            "optim.lr" => self.adam.lr = parse(key, v)?,
            "optim.beta1" => self.adam.beta1 = parse(key, v)?,
            "optim.beta2" => self.adam.beta2 = parse(key, v)?,
            "optim.eps" => self.adam.eps = parse(key, v)?,
            "eval.episodes" => self.eval_episodes = parse(key, v)?,
            "eval.planner_episodes" => self.eval_planner_episodes = parse(key, v)?,
            "eval.value_samples" => self.value_samples = parse(key, v)?,
            "model.latent_dim" => self.model.latent_dim = parse(key, v)?,
            "model.encoder_hidden" => self.model.encoder_hidden = parse_list(key, v)?,
            "model.dynamics_hidden" => self.model.dynamics_hidden = parse_list(key, v)?,
            "model.head_hidden" => self.model.head_hidden = parse_list(key, v)?,
            "model.num_q" => self.model.num_q = parse(key, v)?,
            "model.q_dropout" => self.model.q_dropout = parse(key, v)?,
            "model.gamma" => self.model.gamma = parse(key, v)?,
            "model.target_rho" => self.model.target_rho = parse(key, v)?,
            "bins.count" => self.model.bins.n_bins = parse(key, v)?,
            "bins.vmin" => self.model.bins.vmin = parse(key, v)?,
            "bins.vmax" => self.model.bins.vmax = parse(key, v)?,
            "bins.symlog" => self.model.bins.symlog = parse(key, v)?,
            "loss.consistency" => self.model.weights.consistency = parse(key, v)?,
            "loss.reward" => self.model.weights.reward = parse(key, v)?,
            "loss.value" => self.model.weights.value = parse(key, v)?,
            "planner.iterations" => self.planner.iterations = parse(key, v)?,
            "planner.samples" => self.planner.samples = parse(key, v)?,
            "planner.elites" => self.planner.elites = parse(key, v)?,
            "planner.policy_rollouts" => self.planner.policy_rollouts = parse(key, v)?,
            "planner.horizon" => self.planner.horizon = parse(key, v)?,
            "planner.std_min" => self.planner.std_min = parse(key, v)?,
            "planner.std_max" => self.planner.std_max = parse(key, v)?,
            "planner.temperature" => self.planner.temperature = parse(key, v)?,
            "policy.hidden" => self.policy.hidden = parse_list(key, v)?,
            "policy.alpha" => self.policy.alpha = parse(key, v)?,
            "policy.beta" => self.policy.beta = parse(key, v)?,
            "policy.lambda" => self.policy.lambda = parse(key, v)?,
            "policy.log_std_min" => self.policy.log_std_min = parse(key, v)?,
            "policy.log_std_max" => self.policy.log_std_max = parse(key, v)?,
            "policy.scale_threshold" => self.policy.scale_threshold = parse(key, v)?,
            "policy.percentile_rate" => self.policy.percentile_rate = parse(key, v)?,
            "policy.log_mu_floor" => self.policy.log_mu_floor = parse(key, v)?,
            other => return Err(format!("unknown key '{other}'")),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse { line: i + 1, msg: format!("expected 'key = value', got '{line}'") });
            };
            cfg.set(k.trim(), v).map_err(|msg| Error::Parse { line: i + 1, msg })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::parse(&text)
    }

    pub fn to_text(&self) -> String {
        self.entries().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        make_env(&self.env_name, self.env_dim, self.seed)?;
        if self.batch_size == 0 || self.update_ratio == 0 || self.log_interval == 0 {
            return Err(Error::config("batch size, update ratio and log interval must be positive"));
        }
        if self.buffer_capacity < self.planner.horizon {
            return Err(Error::config("replay buffer cannot hold a single segment"));
        }
        if !(self.grad_clip > 0.0) || !(self.adam.lr > 0.0) {
            return Err(Error::config("gradient clip and learning rate must be positive"));
        }
        if self.eval_episodes == 0 || self.value_samples == 0 {
            return Err(Error::config("evaluation needs at least one episode and one value sample"));
        }
        if !(0.0..1.0).contains(&self.model.q_dropout) {
            return Err(Error::config("Q dropout must lie in [0, 1)"));
        }
        self.model.validate()?;
        self.planner.validate()?;
        self.policy.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_roundtrip() {
        let mut cfg = RunConfig::default();
        cfg.planner.horizon = 1;
        cfg.policy.beta = 0.05;
        cfg.model.head_hidden = vec![32, 16];
        cfg.variant = Variant::Bc;
        let back = RunConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_key_names_line() {
        let err = RunConfig::parse("run.seed = 3\n\nplanner.horizn = 2\n").unwrap_err();
        match err {
            Error::Parse { line, msg } => {
                assert_eq!(line, 3);
                assert!(msg.contains("planner.horizn"));
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn comments_and_invalid_values() {
        let cfg = RunConfig::parse("# header\nplanner.horizon = 1 # short\n").unwrap();
        assert_eq!(cfg.planner.horizon, 1);
        assert!(matches!(RunConfig::parse("run.steps = many"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(RunConfig::parse("planner.elites = 1000"), Err(Error::Config(_))));
        assert!(RunConfig::parse("env.name = cartpole").is_err());
    }

    #[test]
    fn decimal_output_is_plain() {
        let text = RunConfig::default().to_text();
        assert!(text.contains("optim.lr = 0.0003\n"));
        assert!(text.contains("policy.alpha = 0.0001\n"));
    }
}
