use rand::Rng as _;
use tdmpc_lab::policy::{bc_policy_loss, policy_loss, standard_normal, PolicyBatch};
use tdmpc_lab::rng::seeded;
use tdmpc_lab::tensor::{AdamConfig, AdamState};
use tdmpc_lab::world_model::{BinSpec, ModelConfig};
use tdmpc_lab::{PolicyConfig, TanhGaussianPolicy, Tape, WorldModel};

const LATENT: usize = 4;
const ACT: usize = 2;
const ROWS: usize = 32;

/// Model with non-zero Q heads, so the value term pulls away from the
/// behavior means.
fn frozen_model() -> WorldModel {
    let cfg = ModelConfig {
        latent_dim: LATENT,
        encoder_hidden: vec![8],
        dynamics_hidden: vec![8],
        head_hidden: vec![16],
        bins: BinSpec { n_bins: 41, ..BinSpec::default() },
        ..ModelConfig::default()
    };
    let mut m = WorldModel::new(3, ACT, cfg, 2).unwrap();
    let mut rng = seeded(8);
    for p in m.all_param_sets_mut() {
        let flat: Vec<f64> = p.flat_values().iter().map(|v| v + rng.random_range(-0.5..0.5)).collect();
        p.load_flat(&flat).unwrap();
    }
    m
}

enum Arm {
    Beta(f64),
    Bc,
}

/// Mean absolute gap between the policy's mean action and the stored
/// behavior means after a fixed number of Adam steps.
fn gap_after_training(arm: Arm, steps: usize) -> f64 {
    let model = frozen_model();
    let mut policy = TanhGaussianPolicy::new(LATENT, ACT, PolicyConfig { hidden: vec![16], ..PolicyConfig::default() }, 5).unwrap();
    let mut adam = AdamState::new(AdamConfig { lr: 3e-3, ..AdamConfig::default() }, policy.params());
    let mut rng = seeded(21);
    let latents = vec![(0..ROWS * LATENT).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>()];
    let mu_mean = vec![(0..ROWS * ACT).map(|_| rng.random_range(-0.8..0.8)).collect::<Vec<f64>>()];
    let mu_std = vec![vec![0.3; ROWS * ACT]];
    let batch = PolicyBatch { latents: &latents, mu_mean: &mu_mean, mu_std: &mu_std };
    let mut noise_rng = seeded(99);
    for _ in 0..steps {
        let noise = vec![standard_normal(&mut noise_rng, ROWS * ACT)];
        let mut tape = Tape::new();
        let out = match arm {
            Arm::Beta(b) => policy_loss(&policy, &mut tape, &model, &batch, 1.0, b, &noise).unwrap(),
            Arm::Bc => bc_policy_loss(&policy, &mut tape, &model, &batch, 1.0, &noise).unwrap(),
        };
        tape.backward(out.loss).unwrap();
        policy.params_mut().zero_grad();
        policy.params_mut().accumulate_grads(&tape, &out.vars);
        adam.step(policy.params_mut()).unwrap();
    }
    let a = policy.mean_action(&latents[0]);
    a.iter().zip(&mu_mean[0]).map(|(x, m)| (x - m).abs()).sum::<f64>() / a.len() as f64
}

#[test]
fn stronger_constraint_stays_closer_to_behavior() {
    let gaps: Vec<f64> = [Arm::Beta(0.0), Arm::Beta(0.05), Arm::Beta(1.0), Arm::Bc].into_iter().map(|a| gap_after_training(a, 300)).collect();
    for w in gaps.windows(2) {
        assert!(w[1] <= w[0] + 1e-9, "gaps not monotone in β: {gaps:?}");
    }
    assert!(gaps[3] < gaps[0], "behavior cloning did not move toward μ: {gaps:?}");
}
