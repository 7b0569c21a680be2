use rand::{Rng as _, RngCore};

use super::buffer::{ReplayBuffer, TransitionRecord};
use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use super::metrics::MetricsRow;
use crate::envs::{make_env, Env};
use crate::error::{Error, Result};
use crate::planner::{plan, shift_warm_start, LearnedModel, PlanDistribution, PlannerConfig};
use crate::policy::{bc_policy_loss, policy_loss, standard_normal, PolicyBatch, PolicyLossTerms, ScaleTracker, TanhGaussianPolicy, Variant};
use crate::rng::{derive, Rng};
use crate::tensor::{clip_global_norm, clip_global_norm_sets, AdamConfig, AdamState, ParamSet, Tape};
use crate::world_model::{ModelLossTerms, WorldModel};

/// Behavior parameters stored for uniformly random pretraining actions:
/// the moments of `U(-1, 1)`.
pub const RANDOM_MU_STD: f64 = 0.577_350_269_189_625_8;

mod purpose {
    pub const EPISODE: u64 = 1;
    pub const PLAN: u64 = 2;
    pub const UPDATE: u64 = 3;
    pub const RANDOM_ACTION: u64 = 4;
    pub const EVAL: u64 = 5;
    pub const VALUE: u64 = 6;
    pub const INIT: u64 = 7;
}

/// Independent stream for `(purpose, counter)` of a run.
pub fn stream(seed: u64, purpose: u64, counter: u64) -> Rng {
    derive(seed, (purpose << 48) ^ counter)
}

fn stream_seed(seed: u64, purpose: u64, counter: u64) -> u64 {
    stream(seed, purpose, counter).next_u64()
}

/// Losses of one update. The policy part is absent for model-only updates.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TrainStats {
    pub model: ModelLossTerms,
    pub policy: Option<PolicyLossTerms>,
}

/// Adam states for every online model network and for the policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizers {
    pub model: Vec<AdamState>,
    pub policy: AdamState,
}

impl Optimizers {
    pub fn new(cfg: AdamConfig, model: &WorldModel, policy: &TanhGaussianPolicy) -> Self {
        Optimizers { model: model.param_sets().into_iter().map(|p| AdamState::new(cfg, p)).collect(), policy: AdamState::new(cfg, policy.params()) }
    }
}

/// Curriculum gate with one logging interval of hysteresis: the state
/// flips only after two consecutive observations disagree with it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BetaGate {
    pub on: bool,
    pending: bool,
}

impl BetaGate {
    pub fn observe(&mut self, above_threshold: bool) {
        if above_threshold == self.on {
            self.pending = false;
        } else if self.pending {
            self.on = above_threshold;
            self.pending = false;
        } else {
            self.pending = true;
        }
    }
}

/// Result of one planner-driven environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct CollectOutcome {
    pub next_obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub warm_start: Option<PlanDistribution>,
}

/// One planner call, one environment step and one stored transition. The
/// warm start is shifted for the next call and cleared at episode end.
#[allow(clippy::too_many_arguments)]
pub fn collect_step(
    env: &mut dyn Env,
    obs: &[f64],
    agent: LearnedModel,
    planner: &PlannerConfig,
    warm_start: Option<&PlanDistribution>,
    buffer: &mut ReplayBuffer,
    episode: u64,
    step: usize,
    seed: u64,
) -> Result<CollectOutcome> {
    let z = agent.model.encode(obs)?;
    let result = plan(&agent, &z, warm_start, planner, seed, true)?;
    let s = env.step(&result.action).map_err(|e| Error::contract(format!("environment step {step} of episode {episode}: {e}")))?;
    let d = &result.distribution;
    buffer.push(TransitionRecord {
        obs: obs.to_vec(),
        action: result.action.clone(),
        mu_mean: d.first_mean().to_vec(),
        mu_std: d.first_std().to_vec(),
        reward: s.reward,
        next_obs: s.obs.clone(),
        done: s.done,
        terminal: s.terminal,
        episode,
        step,
    });
    let warm_start = if s.done { None } else { Some(shift_warm_start(d, planner.std_max)) };
    Ok(CollectOutcome { next_obs: s.obs, reward: s.reward, done: s.done, warm_start })
}

fn adam_steps(opts: &mut [AdamState], sets: Vec<&mut ParamSet>) -> Result<()> {
    for (o, p) in opts.iter_mut().zip(sets) {
        o.step(p)?;
        p.zero_grad();
    }
    Ok(())
}

/// One model update and, unless `model_only`, one policy update followed
/// by the tracker and Polyak updates.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    buffer: &ReplayBuffer,
    model: &mut WorldModel,
    policy: &mut TanhGaussianPolicy,
    opt: &mut Optimizers,
    tracker: &mut ScaleTracker,
    variant: Variant,
    beta_eff: f64,
    config: &RunConfig,
    rng: &mut Rng,
    model_only: bool,
) -> Result<TrainStats> {
    if buffer.is_empty() {
        return Err(Error::contract("train_step needs a non-empty replay buffer"));
    }
    let h = config.planner.horizon;
    let batch = buffer.sample(config.batch_size, h, rng)?;

    let z_next = model.next_latents(&batch)?;
    let mut q_targets = Vec::with_capacity(h);
    for t in 0..h {
        let a_next = policy.sample_action(&z_next[t], rng);
        q_targets.push(model.td_target(&batch.rewards[t], &batch.terminals[t], &z_next[t], &a_next, rng));
    }

    let mut tape = Tape::new();
    let out = model.model_loss(&mut tape, &batch, &q_targets, Some(rng))?;
    tape.backward(out.loss)?;
    model.zero_grad();
    model.accumulate_grads(&tape, &out.bound);
    clip_global_norm_sets(&mut model.param_sets_mut(), config.grad_clip)?;
    adam_steps(&mut opt.model, model.param_sets_mut())?;
    let mut stats = TrainStats { model: out.terms, policy: None };

    if !model_only {
        let latents = &out.latents[..h];
        let pb = PolicyBatch { latents, mu_mean: &batch.mu_mean, mu_std: &batch.mu_std };
        let noise: Vec<Vec<f64>> = (0..h).map(|_| standard_normal(rng, batch.batch * policy.action_dim())).collect();
        let scale = tracker.scale();
        let mut tape = Tape::new();
        let pout = match variant {
            Variant::Bc => bc_policy_loss(policy, &mut tape, model, &pb, scale, &noise)?,
            Variant::Constrained | Variant::BaselineB0 => policy_loss(policy, &mut tape, model, &pb, scale, beta_eff, &noise)?,
        };
        tape.backward(pout.loss)?;
        policy.params_mut().zero_grad();
        policy.params_mut().accumulate_grads(&tape, &pout.vars);
        clip_global_norm(policy.params_mut(), config.grad_clip)?;
        opt.policy.step(policy.params_mut())?;
        policy.params_mut().zero_grad();
        tracker.update(&pout.q_values)?;
        stats.policy = Some(pout.terms);
    }
    model.update_targets()?;
    Ok(stats)
}

/// Mean discounted return of the nominal policy's mean action over
/// `episodes` episodes from `ρ0`, returned with the mean undiscounted
/// return.
pub fn evaluate_true_value(
    env: &mut dyn Env,
    model: &WorldModel,
    policy: &TanhGaussianPolicy,
    episodes: usize,
    gamma: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    if episodes == 0 {
        return Err(Error::contract("need at least one evaluation episode"));
    }
    let (mut disc_sum, mut raw_sum) = (0.0, 0.0);
    for e in 0..episodes {
        let mut obs = env.reset(stream_seed(seed, purpose::EVAL, e as u64));
        let mut g = 1.0;
        loop {
            let a = policy.mean_action(&model.encode(&obs)?);
            let s = env.step(&a)?;
            disc_sum += g * s.reward;
            raw_sum += s.reward;
            g *= gamma;
            obs = s.obs;
            if s.done {
                break;
            }
        }
    }
    Ok((disc_sum / episodes as f64, raw_sum / episodes as f64))
}

/// `E_{s~ρ0, a~π}[Q̄(h(s), a)]` over `samples` initial states.
pub fn evaluate_value_estimate(env: &mut dyn Env, model: &WorldModel, policy: &TanhGaussianPolicy, samples: usize, seed: u64) -> Result<f64> {
    if samples == 0 {
        return Err(Error::contract("need at least one value sample"));
    }
    let mut obs = Vec::with_capacity(samples * model.obs_dim());
    for i in 0..samples {
        obs.extend(env.reset(stream_seed(seed, purpose::EVAL, i as u64)));
    }
    let z = model.encode(&obs)?;
    let mut rng = stream(seed, purpose::VALUE, 0);
    let a = policy.sample_action(&z, &mut rng);
    let q = model.q_mean(&z, &a);
    Ok(q.iter().sum::<f64>() / samples as f64)
}

/// Mean undiscounted return acting with the planner's mean action.
pub fn evaluate_planner_return(env: &mut dyn Env, agent: LearnedModel, planner: &PlannerConfig, episodes: usize, seed: u64) -> Result<f64> {
    let mut total = 0.0;
    for e in 0..episodes {
        let mut obs = env.reset(stream_seed(seed, purpose::EVAL, e as u64));
        let mut warm: Option<PlanDistribution> = None;
        for k in 0.. {
            let z = agent.model.encode(&obs)?;
            let r = plan(&agent, &z, warm.as_ref(), planner, stream_seed(seed, purpose::EVAL, ((e as u64) << 32) | k), false)?;
            let s = env.step(&r.action)?;
            total += s.reward;
            obs = s.obs;
            if s.done {
                break;
            }
            warm = Some(shift_warm_start(&r.distribution, planner.std_max));
        }
    }
    Ok(total / episodes.max(1) as f64)
}

#[derive(Debug, Clone, Copy, Default)]
struct StatsAccumulator {
    n_model: usize,
    n_policy: usize,
    model: ModelLossTerms,
    policy: PolicyLossTerms,
}

impl StatsAccumulator {
    fn add(&mut self, s: &TrainStats) {
        self.n_model += 1;
        self.model.total += s.model.total;
        self.model.consistency += s.model.consistency;
        self.model.reward += s.model.reward;
        self.model.value += s.model.value;
        if let Some(p) = s.policy {
            self.n_policy += 1;
            self.policy.total += p.total;
            self.policy.q += p.q;
            self.policy.log_pi += p.log_pi;
            self.policy.log_mu += p.log_mu;
        }
    }

    fn fill(&self, row: &mut MetricsRow) {
        if self.n_model > 0 {
            let k = self.n_model as f64;
            row.model_loss = self.model.total / k;
            row.consistency = self.model.consistency / k;
            row.reward_ce = self.model.reward / k;
            row.value_ce = self.model.value / k;
        }
        if self.n_policy > 0 {
            let k = self.n_policy as f64;
            row.policy_loss = self.policy.total / k;
            row.policy_q = self.policy.q / k;
            row.log_pi = self.policy.log_pi / k;
            row.log_mu = self.policy.log_mu / k;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub episodes: usize,
    /// Mean undiscounted return of the nominal policy's mean action.
    pub policy_return: f64,
    /// Mean undiscounted return acting with the planner.
    pub planner_return: f64,
    pub true_value: f64,
    pub value_estimate: f64,
    pub error_ratio: f64,
}

/// Full training state. Every random draw comes from a stream keyed by
/// the run seed and a counter, so the state below is all a resume needs.
pub struct Trainer {
    pub config: RunConfig,
    env: Box<dyn Env>,
    eval_env: Box<dyn Env>,
    pub model: WorldModel,
    pub policy: TanhGaussianPolicy,
    pub opt: Optimizers,
    pub tracker: ScaleTracker,
    pub gate: BetaGate,
    pub buffer: ReplayBuffer,
    obs: Vec<f64>,
    warm: Option<PlanDistribution>,
    episode: u64,
    episode_step: usize,
    episode_return: f64,
    last_episode_return: f64,
    /// Planner-driven steps so far.
    pub collected: u64,
    pub updates: u64,
    pub pretrained: bool,
    pub rows_logged: u64,
    acc: StatsAccumulator,
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let env = make_env(&config.env_name, config.env_dim, config.seed)?;
        let eval_env = make_env(&config.env_name, config.env_dim, config.seed)?;
        let spec = env.spec().clone();
        let model = WorldModel::new(spec.obs_dim, spec.action_dim, config.model.clone(), stream_seed(config.seed, purpose::INIT, 0))?;
        let policy = TanhGaussianPolicy::new(model.latent_dim(), spec.action_dim, config.policy.clone(), stream_seed(config.seed, purpose::INIT, 1))?;
        let opt = Optimizers::new(config.adam, &model, &policy);
        let buffer = ReplayBuffer::new(config.buffer_capacity)?;
        let tracker = ScaleTracker::new(config.policy.percentile_rate);
        let mut t = Trainer {
            env,
            eval_env,
            model,
            policy,
            opt,
            tracker,
            gate: BetaGate::default(),
            buffer,
            obs: Vec::new(),
            warm: None,
            episode: 0,
            episode_step: 0,
            episode_return: 0.0,
            last_episode_return: f64::NAN,
            collected: 0,
            updates: 0,
            pretrained: false,
            rows_logged: 0,
            acc: StatsAccumulator::default(),
            config,
        };
        t.start_episode();
        Ok(t)
    }

    fn start_episode(&mut self) {
        self.obs = self.env.reset(stream_seed(self.config.seed, purpose::EPISODE, self.episode));
        self.episode_step = 0;
        self.episode_return = 0.0;
        self.warm = None;
    }

    fn finish_step(&mut self, next_obs: Vec<f64>, reward: f64, done: bool) {
        self.episode_return += reward;
        self.episode_step += 1;
        self.obs = next_obs;
        if done {
            self.last_episode_return = self.episode_return;
            self.episode += 1;
            self.start_episode();
        }
    }

    /// Whether the environment sits at the start of an episode.
    pub fn at_episode_start(&self) -> bool {
        self.episode_step == 0
    }

    pub fn beta_eff(&self) -> f64 {
        match self.config.variant {
            Variant::Constrained if self.gate.on => self.config.policy.beta,
            _ => 0.0,
        }
    }

    fn random_step(&mut self) -> Result<()> {
        let m = self.env.spec().action_dim;
        let mut rng = stream(self.config.seed, purpose::RANDOM_ACTION, self.buffer.inserted());
        let action: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let s = self.env.step(&action)?;
        self.buffer.push(TransitionRecord {
            obs: self.obs.clone(),
            action,
            mu_mean: vec![0.0; m],
            mu_std: vec![RANDOM_MU_STD; m],
            reward: s.reward,
            next_obs: s.obs.clone(),
            done: s.done,
            terminal: s.terminal,
            episode: self.episode,
            step: self.episode_step,
        });
        self.finish_step(s.obs, s.reward, s.done);
        Ok(())
    }

    fn update(&mut self, model_only: bool) -> Result<TrainStats> {
        let mut rng = stream(self.config.seed, purpose::UPDATE, self.updates);
        let beta = self.beta_eff();
        let stats = train_step(
            &self.buffer,
            &mut self.model,
            &mut self.policy,
            &mut self.opt,
            &mut self.tracker,
            self.config.variant,
            beta,
            &self.config,
            &mut rng,
            model_only,
        )?;
        self.updates += 1;
        self.acc.add(&stats);
        Ok(stats)
    }

    /// Random-action data collection followed by model-only updates.
    pub fn pretrain(&mut self) -> Result<()> {
        if self.pretrained {
            return Ok(());
        }
        for _ in 0..self.config.pretrain_steps {
            self.random_step()?;
        }
        if self.buffer.count_valid_windows(self.config.planner.horizon) > 0 {
            for _ in 0..self.config.pretrain_updates {
                self.update(true)?;
            }
        }
        self.pretrained = true;
        Ok(())
    }

    /// One planner-driven environment step followed by the configured
    /// number of updates.
    pub fn step(&mut self) -> Result<()> {
        let seed = stream_seed(self.config.seed, purpose::PLAN, self.collected);
        let agent = LearnedModel { model: &self.model, policy: &self.policy };
        let out = collect_step(
            self.env.as_mut(),
            &self.obs,
            agent,
            &self.config.planner,
            self.warm.as_ref(),
            &mut self.buffer,
            self.episode,
            self.episode_step,
            seed,
        )?;
        self.collected += 1;
        let done = out.done;
        self.warm = out.warm_start;
        self.finish_step(out.next_obs, out.reward, done);
        if self.buffer.has_valid_window(self.config.planner.horizon) {
            for _ in 0..self.config.update_ratio {
                self.update(false)?;
            }
        }
        Ok(())
    }

    /// Evaluates, advances the curriculum gate and returns the interval's
    /// metrics row.
    pub fn log_row(&mut self) -> Result<MetricsRow> {
        let cfg = &self.config;
        let seed = cfg.seed;
        let gamma = self.model.gamma();
        let (true_value, _) = evaluate_true_value(self.eval_env.as_mut(), &self.model, &self.policy, cfg.eval_episodes, gamma, seed)?;
        let value_estimate = evaluate_value_estimate(self.eval_env.as_mut(), &self.model, &self.policy, cfg.value_samples, seed)?;
        let eval_return = if cfg.eval_planner_episodes > 0 {
            let agent = LearnedModel { model: &self.model, policy: &self.policy };
            evaluate_planner_return(self.eval_env.as_mut(), agent, &cfg.planner, cfg.eval_planner_episodes, seed)?
        } else {
            f64::NAN
        };
        let mut row = MetricsRow {
            env_step: self.collected,
            updates: self.updates,
            episode_return: self.last_episode_return,
            eval_return,
            beta_eff: self.beta_eff(),
            scale: self.tracker.scale(),
            value_estimate,
            true_value,
            error_ratio: (value_estimate - true_value) / true_value,
            ..Default::default()
        };
        self.acc.fill(&mut row);
        self.acc = StatsAccumulator::default();
        self.gate.observe(self.tracker.scale() >= self.config.policy.scale_threshold);
        self.rows_logged += 1;
        Ok(row)
    }

    /// Standalone evaluation with `episodes` episodes for every estimate.
    pub fn evaluate(&mut self, episodes: usize) -> Result<EvalReport> {
        let seed = self.config.seed;
        let gamma = self.model.gamma();
        let (true_value, policy_return) = evaluate_true_value(self.eval_env.as_mut(), &self.model, &self.policy, episodes, gamma, seed)?;
        let value_estimate = evaluate_value_estimate(self.eval_env.as_mut(), &self.model, &self.policy, self.config.value_samples, seed)?;
        let agent = LearnedModel { model: &self.model, policy: &self.policy };
        let planner_return = evaluate_planner_return(self.eval_env.as_mut(), agent, &self.config.planner, episodes, seed)?;
        Ok(EvalReport {
            episodes,
            policy_return,
            planner_return,
            true_value,
            value_estimate,
            error_ratio: (value_estimate - true_value) / true_value,
        })
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        if !self.at_episode_start() {
            return Err(Error::contract("checkpoints are taken at episode boundaries"));
        }
        let mut ck = Checkpoint::default();
        for (k, v) in self.config.entries() {
            ck.put_meta(format!("config.{k}"), v);
        }
        ck.put_meta("state.episode", self.episode);
        ck.put_meta("state.last_episode_return", self.last_episode_return);
        ck.put_meta("state.collected", self.collected);
        ck.put_meta("state.updates", self.updates);
        ck.put_meta("state.pretrained", self.pretrained);
        ck.put_meta("state.rows_logged", self.rows_logged);
        ck.put_meta("state.gate_on", self.gate.on);
        ck.put_meta("state.gate_pending", self.gate.pending);
        ck.put_meta("state.tracker_low", self.tracker.low);
        ck.put_meta("state.tracker_high", self.tracker.high);
        ck.put_meta("state.buffer_inserted", self.buffer.inserted());
        for (i, p) in self.model.all_param_sets().into_iter().enumerate() {
            ck.put_params(&format!("model.{i}"), p);
        }
        ck.put_params("policy", self.policy.params());
        let opts = self.opt.model.iter().chain(std::iter::once(&self.opt.policy));
        for (i, o) in opts.enumerate() {
            ck.put_meta(format!("adam.{i}.step"), o.step_count());
            let (m, v) = o.moments();
            for (j, (mj, vj)) in m.iter().zip(v).enumerate() {
                ck.put_array(format!("adam.{i}.m.{j}"), vec![mj.len()], mj.clone());
                ck.put_array(format!("adam.{i}.v.{j}"), vec![vj.len()], vj.clone());
            }
        }
        put_buffer(&mut ck, &self.buffer);
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut text = String::new();
        for (k, v) in &ck.meta {
            if let Some(key) = k.strip_prefix("config.") {
                text.push_str(&format!("{key} = {v}\n"));
            }
        }
        let config = RunConfig::parse(&text)?;
        let mut t = Trainer::new(config)?;
        for (i, p) in t.model.all_param_sets_mut().into_iter().enumerate() {
            ck.load_params(&format!("model.{i}"), p)?;
        }
        ck.load_params("policy", t.policy.params_mut())?;
        let n_model = t.opt.model.len();
        for i in 0..=n_model {
            let o = if i < n_model { &mut t.opt.model[i] } else { &mut t.opt.policy };
            let step: u64 = ck.meta_parse(&format!("adam.{i}.step"))?;
            let n = o.moments().0.len();
            let mut m = Vec::with_capacity(n);
            let mut v = Vec::with_capacity(n);
            for j in 0..n {
                m.push(ck.array(&format!("adam.{i}.m.{j}"))?.1.to_vec());
                v.push(ck.array(&format!("adam.{i}.v.{j}"))?.1.to_vec());
            }
            o.restore(m, v, step)?;
        }
        t.buffer = get_buffer(ck, t.config.buffer_capacity)?;
        t.episode = ck.meta_parse("state.episode")?;
        t.last_episode_return = ck.meta_parse("state.last_episode_return")?;
        t.collected = ck.meta_parse("state.collected")?;
        t.updates = ck.meta_parse("state.updates")?;
        t.pretrained = ck.meta_parse("state.pretrained")?;
        t.rows_logged = ck.meta_parse("state.rows_logged")?;
        t.gate = BetaGate { on: ck.meta_parse("state.gate_on")?, pending: ck.meta_parse("state.gate_pending")? };
        t.tracker.low = ck.meta_parse("state.tracker_low")?;
        t.tracker.high = ck.meta_parse("state.tracker_high")?;
        t.start_episode();
        Ok(t)
    }
}

fn put_buffer(ck: &mut Checkpoint, b: &ReplayBuffer) {
    let n = b.len();
    ck.put_meta("buffer.len", n);
    ck.put_meta("buffer.inserted", b.inserted());
    if n == 0 {
        return;
    }
    let (od, m) = (b.get(0).obs.len(), b.get(0).action.len());
    let mut obs = Vec::with_capacity(n * od);
    let mut next = Vec::with_capacity(n * od);
    let mut act = Vec::with_capacity(n * m);
    let mut mm = Vec::with_capacity(n * m);
    let mut ms = Vec::with_capacity(n * m);
    let mut scalars = Vec::with_capacity(n * 5);
    for r in b.iter() {
        obs.extend_from_slice(&r.obs);
        next.extend_from_slice(&r.next_obs);
        act.extend_from_slice(&r.action);
        mm.extend_from_slice(&r.mu_mean);
        ms.extend_from_slice(&r.mu_std);
        scalars.extend([r.reward, r.done as u8 as f64, r.terminal as u8 as f64, r.episode as f64, r.step as f64]);
    }
    ck.put_array("buffer.obs", vec![n, od], obs);
    ck.put_array("buffer.next_obs", vec![n, od], next);
    ck.put_array("buffer.action", vec![n, m], act);
    ck.put_array("buffer.mu_mean", vec![n, m], mm);
    ck.put_array("buffer.mu_std", vec![n, m], ms);
    ck.put_array("buffer.scalars", vec![n, 5], scalars);
}

fn get_buffer(ck: &Checkpoint, capacity: usize) -> Result<ReplayBuffer> {
    let n: usize = ck.meta_parse("buffer.len")?;
    let inserted: u64 = ck.meta_parse("buffer.inserted")?;
    let mut b = ReplayBuffer::new(capacity)?;
    if n > 0 {
        let (s, obs) = ck.array("buffer.obs")?;
        let od = s[1];
        let next = ck.array("buffer.next_obs")?.1;
        let (s, act) = ck.array("buffer.action")?;
        let m = s[1];
        let mm = ck.array("buffer.mu_mean")?.1;
        let ms = ck.array("buffer.mu_std")?.1;
        let sc = ck.array("buffer.scalars")?.1;
        for i in 0..n {
            b.push(TransitionRecord {
                obs: obs[i * od..(i + 1) * od].to_vec(),
                action: act[i * m..(i + 1) * m].to_vec(),
                mu_mean: mm[i * m..(i + 1) * m].to_vec(),
                mu_std: ms[i * m..(i + 1) * m].to_vec(),
                reward: sc[i * 5],
                next_obs: next[i * od..(i + 1) * od].to_vec(),
                done: sc[i * 5 + 1] != 0.0,
                terminal: sc[i * 5 + 2] != 0.0,
                episode: sc[i * 5 + 3] as u64,
                step: sc[i * 5 + 4] as usize,
            });
        }
    }
    b.set_inserted(inserted);
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[allow(clippy::field_reassign_with_default)]
    pub(crate) fn tiny_config() -> RunConfig {
        let mut c = RunConfig::default();
        c.env_name = "point-mass-chain".into();
        c.env_dim = 2;
        c.steps = 30;
        c.batch_size = 8;
        c.pretrain_steps = 40;
        c.pretrain_updates = 5;
        c.log_interval = 10;
        c.eval_episodes = 1;
        c.eval_planner_episodes = 0;
        c.value_samples = 4;
        c.model.latent_dim = 4;
        c.model.encoder_hidden = vec![8];
        c.model.dynamics_hidden = vec![8];
        c.model.head_hidden = vec![8];
        c.model.bins.n_bins = 21;
        c.policy.hidden = vec![8];
        c.planner.samples = 32;
        c.planner.elites = 4;
        c.planner.policy_rollouts = 4;
        c.planner.iterations = 2;
        c
    }

    #[test]
    fn gate_hysteresis() {
        let mut g = BetaGate::default();
        g.observe(true);
        assert!(!g.on);
        g.observe(false);
        g.observe(true);
        assert!(!g.on);
        g.observe(true);
        assert!(g.on);
        g.observe(false);
        assert!(g.on);
    }

    #[test]
    fn collect_step_records_plan_first_row() {
        let cfg = tiny_config();
        let mut t = Trainer::new(cfg).unwrap();
        let before = t.buffer.len();
        let agent = LearnedModel { model: &t.model, policy: &t.policy };
        let obs = t.obs.clone();
        let z = t.model.encode(&obs).unwrap();
        let expected = plan(&agent, &z, None, &t.config.planner, 77, true).unwrap();
        let out = collect_step(t.env.as_mut(), &obs, agent, &t.config.planner, None, &mut t.buffer, 0, 0, 77).unwrap();
        assert_eq!(t.buffer.len(), before + 1);
        let rec = t.buffer.get(t.buffer.len() - 1);
        assert_eq!(rec.mu_mean, expected.distribution.first_mean());
        assert_eq!(rec.mu_std, expected.distribution.first_std());
        assert_eq!(rec.action, expected.action);
        assert!(out.warm_start.is_some());
    }

    #[test]
    fn identical_runs_match() {
        let run = || {
            let mut t = Trainer::new(tiny_config()).unwrap();
            t.pretrain().unwrap();
            let mut losses = Vec::new();
            for _ in 0..5 {
                t.step().unwrap();
                losses.push(t.acc.model.total);
            }
            losses
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn updates_are_isolated() {
        let mut t = Trainer::new(tiny_config()).unwrap();
        t.pretrain().unwrap();
        let policy_before = t.policy.params().flat_values();
        t.update(true).unwrap();
        assert_eq!(t.policy.params().flat_values(), policy_before);
        let model_before: Vec<Vec<f64>> = t.model.all_param_sets().iter().map(|p| p.flat_values()).collect();
        let buffer = t.buffer.clone();
        let mut tracker = t.tracker;
        let mut rng = stream(0, 99, 0);
        let batch = buffer.sample(4, t.config.planner.horizon, &mut rng).unwrap();
        let mut tape = Tape::new();
        let latents: Vec<Vec<f64>> = batch.obs[..t.config.planner.horizon].iter().map(|o| t.model.encode(o).unwrap()).collect();
        let pb = PolicyBatch { latents: &latents, mu_mean: &batch.mu_mean, mu_std: &batch.mu_std };
        let noise: Vec<Vec<f64>> = (0..latents.len()).map(|_| vec![0.1; 4 * 2]).collect();
        let out = policy_loss(&t.policy, &mut tape, &t.model, &pb, tracker.scale(), 1.0, &noise).unwrap();
        tape.backward(out.loss).unwrap();
        t.policy.params_mut().accumulate_grads(&tape, &out.vars);
        t.opt.policy.step(t.policy.params_mut()).unwrap();
        tracker.update(&out.q_values).unwrap();
        let model_after: Vec<Vec<f64>> = t.model.all_param_sets().iter().map(|p| p.flat_values()).collect();
        assert_eq!(model_before, model_after);
        assert_ne!(t.policy.params().flat_values(), policy_before);
    }

    #[test]
    fn baseline_reports_zero_beta() {
        let mut cfg = tiny_config();
        cfg.variant = Variant::BaselineB0;
        let mut t = Trainer::new(cfg).unwrap();
        t.gate.on = true;
        assert_eq!(t.beta_eff(), 0.0);
        t.config.variant = Variant::Constrained;
        assert_eq!(t.beta_eff(), 1.0);
    }

    #[test]
    fn constant_reward_true_value() {
        struct Const(crate::envs::EnvSpec, usize);
        impl Env for Const {
            fn spec(&self) -> &crate::envs::EnvSpec {
                &self.0
            }
            fn reset(&mut self, _seed: u64) -> Vec<f64> {
                self.1 = 0;
                vec![0.0]
            }
            fn step(&mut self, _a: &[f64]) -> Result<crate::envs::Step> {
                self.1 += 1;
                Ok(crate::envs::Step { obs: vec![0.0], reward: 1.0, done: self.1 >= 200, terminal: false })
            }
            fn clipped_actions(&self) -> u64 {
                0
            }
        }
        let spec = crate::envs::EnvSpec { name: "const".into(), obs_dim: 1, action_dim: 1, episode_len: 200, r_max: 1.0 };
        let mut env = Const(spec, 0);
        let cfg = tiny_config();
        let model = WorldModel::new(1, 1, cfg.model.clone(), 0).unwrap();
        let policy = TanhGaussianPolicy::new(4, 1, cfg.policy.clone(), 0).unwrap();
        let (v, raw) = evaluate_true_value(&mut env, &model, &policy, 3, 0.99, 0).unwrap();
        let expect = (1.0 - 0.99f64.powi(200)) / 0.01;
        assert!((v - expect).abs() < 1e-9);
        assert!((expect - 86.60).abs() < 0.01);
        assert_eq!(raw, 200.0);
    }

    #[test]
    fn checkpoint_resume_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ckpt");
        let mut cfg = tiny_config();
        cfg.env_name = "graph-world".into();
        let mut a = Trainer::new(cfg).unwrap();
        a.pretrain().unwrap();
        while !a.at_episode_start() || a.collected < 3 {
            a.step().unwrap();
        }
        a.to_checkpoint().unwrap().write(&path).unwrap();
        let mut b = Trainer::from_checkpoint(&Checkpoint::read(&path).unwrap()).unwrap();
        for _ in 0..20 {
            a.step().unwrap();
            b.step().unwrap();
        }
        assert_eq!(a.policy.params().flat_values(), b.policy.params().flat_values());
        assert_eq!(a.model.encoder.params().flat_values(), b.model.encoder.params().flat_values());
        assert!(a.buffer.iter().eq(b.buffer.iter()));
        assert_eq!(a.buffer.inserted(), b.buffer.inserted());
    }
}
