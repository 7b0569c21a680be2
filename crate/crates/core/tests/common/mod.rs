#![allow(dead_code)]

use rand::Rng as _;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tdmpc_lab::planner::{plan, PlannerConfig, PlanningModel};
use tdmpc_lab::policy::{bc_policy_loss, policy_loss, PolicyBatch};
use tdmpc_lab::rng::Rng;
use tdmpc_lab::tensor::{Mlp, MlpSpec, ParamSet};
use tdmpc_lab::world_model::{BinSpec, ModelConfig, SegmentBatch};
use tdmpc_lab::{PolicyConfig, TanhGaussianPolicy, Tape, Var, WorldModel};

pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared in absolute terms.
pub const GRAD_FLOOR: f64 = 1e-6;
pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const COORDS_PER_CASE: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradKind {
    Mlp,
    TanhGaussian,
    ModelLoss,
    PolicyLoss,
    BcLoss,
}

pub const GRAD_KINDS: [GradKind; 5] = [GradKind::Mlp, GradKind::TanhGaussian, GradKind::ModelLoss, GradKind::PolicyLoss, GradKind::BcLoss];

#[derive(Debug, Clone)]
pub struct GradCase {
    pub kind: GradKind,
    pub seed: u64,
    pub coords: usize,
    pub max_rel: f64,
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRAD_FLOOR)
}

fn randn(rng: &mut ChaCha8Rng, n: usize, s: f64) -> Vec<f64> {
    (0..n).map(|_| s * rng.sample::<f64, _>(rand_distr::StandardNormal)).collect()
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Moves every parameter off its initial value so zero-initialised
/// layers do not hide terms.
fn jitter(sets: &mut [&mut ParamSet], rng: &mut ChaCha8Rng, s: f64) {
    for p in sets.iter_mut() {
        let flat: Vec<f64> = p.flat_values().iter().map(|v| v + s * rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
        p.load_flat(&flat).unwrap();
    }
}

/// Compares tape gradients against central differences on a random subset
/// of coordinates. `loss` rebuilds the graph for the current parameters
/// and returns the loss and the bound variables of every set.
fn check<P, L>(params: &mut P, sets_of: impl Fn(&mut P) -> Vec<&mut ParamSet>, loss: L, rng: &mut ChaCha8Rng) -> (usize, f64)
where
    L: Fn(&P, &mut Tape) -> (Var, Vec<Vec<Var>>),
{
    let mut tape = Tape::new();
    let (l, vars) = loss(params, &mut tape);
    tape.backward(l).unwrap();
    let grads: Vec<Vec<f64>> = vars
        .iter()
        .map(|vs| vs.iter().flat_map(|v| tape.grad(*v).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; tape.value(*v).len()])).collect())
        .collect();
    let sizes: Vec<usize> = grads.iter().map(Vec::len).collect();
    let total: usize = sizes.iter().sum();
    let mut worst: f64 = 0.0;
    let n = COORDS_PER_CASE.min(total);
    for _ in 0..n {
        let mut k = rng.random_range(0..total);
        let mut s = 0;
        while k >= sizes[s] {
            k -= sizes[s];
            s += 1;
        }
        let eval = |params: &mut P, delta: f64| {
            {
                let mut sets = sets_of(params);
                let mut flat = sets[s].flat_values();
                flat[k] += delta;
                sets[s].load_flat(&flat).unwrap();
            }
            let mut t = Tape::new();
            let (l, _) = loss(params, &mut t);
            let v = t.scalar_value(l);
            let mut sets = sets_of(params);
            let mut flat = sets[s].flat_values();
            flat[k] -= delta;
            sets[s].load_flat(&flat).unwrap();
            v
        };
        let up = eval(params, FD_STEP);
        let down = eval(params, -FD_STEP);
        let fd = (up - down) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(grads[s][k], fd));
    }
    (n, worst)
}

fn small_model(rng: &mut ChaCha8Rng, obs: usize, act: usize) -> WorldModel {
    let latent = rng.random_range(2..6);
    let cfg = ModelConfig {
        latent_dim: latent,
        encoder_hidden: vec![rng.random_range(3..7)],
        dynamics_hidden: vec![rng.random_range(3..7)],
        head_hidden: vec![rng.random_range(3..7)],
        num_q: rng.random_range(2..4),
        q_dropout: 0.0,
        bins: BinSpec { n_bins: 11, ..BinSpec::default() },
        ..ModelConfig::default()
    };
    let mut m = WorldModel::new(obs, act, cfg, rng.random()).unwrap();
    jitter(&mut m.all_param_sets_mut(), rng, 0.3);
    m
}

fn small_policy(rng: &mut ChaCha8Rng, latent: usize, act: usize) -> TanhGaussianPolicy {
    let cfg = PolicyConfig { hidden: vec![rng.random_range(3..7)], alpha: rng.random_range(0.0..0.5), ..PolicyConfig::default() };
    let mut p = TanhGaussianPolicy::new(latent, act, cfg, rng.random()).unwrap();
    jitter(&mut [p.params_mut()], rng, 0.2);
    p
}

/// Behavior Gaussians wide enough that the per-dimension floor is never
/// active, so the loss is smooth at the evaluation point.
fn policy_batch(rng: &mut ChaCha8Rng, h: usize, rows: usize, latent: usize, act: usize) -> [Vec<Vec<f64>>; 4] {
    let latents = (0..h).map(|_| randn(rng, rows * latent, 1.0)).collect();
    let mu_mean = (0..h).map(|_| uniform(rng, rows * act, -0.8, 0.8)).collect();
    let mu_std = (0..h).map(|_| uniform(rng, rows * act, 0.3, 1.0)).collect();
    let noise = (0..h).map(|_| randn(rng, rows * act, 1.0)).collect();
    [latents, mu_mean, mu_std, noise]
}

pub fn grad_case(kind: GradKind, seed: u64) -> GradCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (coords, max_rel) = match kind {
        GradKind::Mlp => {
            let depth = rng.random_range(1..4);
            let mut widths = vec![rng.random_range(1..6)];
            widths.extend((0..depth).map(|_| rng.random_range(2..7)));
            widths.push(rng.random_range(1..4));
            let rows = rng.random_range(1..5);
            let mut net = Mlp::new(MlpSpec::new(widths.clone()), 1.0, &mut rng).unwrap();
            jitter(&mut [net.params_mut()], &mut rng, 0.2);
            let x = randn(&mut rng, rows * widths[0], 1.0);
            let w = randn(&mut rng, rows * widths[widths.len() - 1], 1.0);
            check(
                &mut net,
                |n| vec![n.params_mut()],
                |n, tape| {
                    let input = tape.constant(vec![rows, widths[0]], x.clone());
                    let (y, vars) = n.forward_bound(tape, input, None).unwrap();
                    let y = tape.mul_const(y, w.clone()).unwrap();
                    (tape.sum_all(y), vec![vars])
                },
                &mut rng,
            )
        }
        GradKind::TanhGaussian => {
            let latent = rng.random_range(2..5);
            let act = rng.random_range(1..4);
            let rows = rng.random_range(1..5);
            let mut policy = small_policy(&mut rng, latent, act);
            let z = randn(&mut rng, rows * latent, 1.0);
            let noise = randn(&mut rng, rows * act, 1.0);
            let w = randn(&mut rng, rows, 1.0);
            check(
                &mut policy,
                |p| vec![p.params_mut()],
                |p, tape| {
                    let vars = p.params().bind(tape);
                    let zv = tape.constant(vec![rows, latent], z.clone());
                    let s = p.sample(tape, &vars, zv, noise.clone()).unwrap();
                    let lp = tape.mul_const(s.log_prob, w.clone()).unwrap();
                    let a = tape.sum_all(s.action);
                    let lp = tape.sum_all(lp);
                    (tape.add(lp, a).unwrap(), vec![vars])
                },
                &mut rng,
            )
        }
        GradKind::ModelLoss => {
            let obs = rng.random_range(2..5);
            let act = rng.random_range(1..3);
            let mut model = small_model(&mut rng, obs, act);
            let (b, h) = (rng.random_range(1..4), rng.random_range(1..4));
            let batch = SegmentBatch {
                batch: b,
                horizon: h,
                obs: (0..=h).map(|_| randn(&mut rng, b * obs, 1.0)).collect(),
                actions: (0..h).map(|_| uniform(&mut rng, b * act, -1.0, 1.0)).collect(),
                rewards: (0..h).map(|_| uniform(&mut rng, b, -2.0, 2.0)).collect(),
                terminals: (0..h).map(|_| (0..b).map(|_| rng.random_bool(0.2)).collect()).collect(),
                mu_mean: (0..h).map(|_| vec![0.0; b * act]).collect(),
                mu_std: (0..h).map(|_| vec![1.0; b * act]).collect(),
            };
            let targets: Vec<Vec<f64>> = (0..h).map(|_| uniform(&mut rng, b, -5.0, 30.0)).collect();
            // The consistency target is the online encoder without gradient,
            // so a finite difference on encoder weights would also move the
            // target. Encoder gradients are covered by the MLP cases.
            check(
                &mut model,
                |m| m.param_sets_mut().into_iter().skip(1).collect(),
                |m, tape| {
                    let out = m.model_loss(tape, &batch, &targets, None).unwrap();
                    let mut vars = vec![out.bound.dynamics.clone(), out.bound.reward.clone()];
                    vars.extend(out.bound.q.iter().cloned());
                    (out.loss, vars)
                },
                &mut rng,
            )
        }
        GradKind::PolicyLoss | GradKind::BcLoss => {
            let obs = rng.random_range(2..4);
            let act = rng.random_range(1..3);
            let model = small_model(&mut rng, obs, act);
            let latent = model.latent_dim();
            let mut policy = small_policy(&mut rng, latent, act);
            let (h, rows) = (rng.random_range(1..4), rng.random_range(1..4));
            let [latents, mu_mean, mu_std, noise] = policy_batch(&mut rng, h, rows, latent, act);
            let scale = rng.random_range(0.5..5.0);
            let beta = [0.0, 0.05, 1.0][rng.random_range(0..3)];
            check(
                &mut policy,
                |p| vec![p.params_mut()],
                |p, tape| {
                    let batch = PolicyBatch { latents: &latents, mu_mean: &mu_mean, mu_std: &mu_std };
                    let out = if kind == GradKind::BcLoss {
                        bc_policy_loss(p, tape, &model, &batch, scale, &noise).unwrap()
                    } else {
                        policy_loss(p, tape, &model, &batch, scale, beta, &noise).unwrap()
                    };
                    (out.loss, vec![out.vars])
                },
                &mut rng,
            )
        }
    };
    GradCase { kind, seed, coords, max_rel }
}

/// `n` cases cycling through every kind.
pub fn gradient_suite(n: usize, seed: u64) -> Vec<GradCase> {
    (0..n).map(|i| grad_case(GRAD_KINDS[i % GRAD_KINDS.len()], seed.wrapping_mul(7919).wrapping_add(i as u64))).collect()
}

/// Single-step bounded problem: the reward is a smooth bump in the action
/// and the latent never changes.
pub struct Bump {
    pub center: [f64; 2],
    pub curvature: [f64; 3],
}

impl Bump {
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Bump {
            center: [rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8)],
            curvature: [rng.random_range(1.0..4.0), rng.random_range(1.0..4.0), rng.random_range(-0.8..0.8)],
        }
    }

    pub fn value(&self, a0: f64, a1: f64) -> f64 {
        let (d0, d1) = (a0 - self.center[0], a1 - self.center[1]);
        let [c0, c1, c01] = self.curvature;
        -(c0 * d0 * d0 + c1 * d1 * d1 + c01 * d0 * d1)
    }
}

impl PlanningModel for Bump {
    fn latent_dim(&self) -> usize {
        1
    }
    fn action_dim(&self) -> usize {
        2
    }
    fn gamma(&self) -> f64 {
        0.99
    }
    fn next(&self, z: &[f64], _a: &[f64]) -> Vec<f64> {
        z.to_vec()
    }
    fn reward(&self, _z: &[f64], a: &[f64]) -> Vec<f64> {
        a.chunks(2).map(|r| self.value(r[0], r[1])).collect()
    }
    fn terminal_value(&self, z: &[f64], _rng: &mut Rng) -> Vec<f64> {
        vec![0.0; z.len()]
    }
    fn policy_mode(&self, z: &[f64]) -> Vec<f64> {
        vec![0.0; 2 * z.len()]
    }
}

pub fn grid_argmax(f: impl Fn(f64, f64) -> f64, n: usize) -> [f64; 2] {
    let at = |i: usize| -1.0 + 2.0 * i as f64 / (n - 1) as f64;
    let mut best = (f64::NEG_INFINITY, [0.0; 2]);
    for i in 0..n {
        for j in 0..n {
            let v = f(at(i), at(j));
            if v > best.0 {
                best = (v, [at(i), at(j)]);
            }
        }
    }
    best.1
}

/// Per-dimension distance between the planner mean and the grid argmax.
pub fn planner_oracle_gap(seed: u64) -> f64 {
    let bump = Bump::random(seed);
    let cfg = PlannerConfig { horizon: 1, ..PlannerConfig::default() };
    let r = plan(&bump, &[0.0], None, &cfg, seed, false).unwrap();
    let g = grid_argmax(|a, b| bump.value(a, b), 101);
    r.distribution.first_mean().iter().zip(g).map(|(m, g)| (m - g).abs()).fold(0.0, f64::max)
}

/// Largest roundtrip error relative to half the local bin width over `n`
/// evenly spaced values in `[lo, hi]`.
pub fn two_hot_worst_ratio(bins: &BinSpec, n: usize, lo: f64, hi: f64) -> f64 {
    (0..n)
        .map(|i| {
            let v = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            let back = bins.decode_expectation(&bins.two_hot_encode(v).unwrap()).unwrap();
            (back - v).abs() / (0.5 * bins.local_raw_width(v))
        })
        .fold(0.0, f64::max)
}
