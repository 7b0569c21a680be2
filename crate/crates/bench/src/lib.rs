//! Shared fixtures for the kernel benches.

use tdmpc_lab::harness::Trainer;
use tdmpc_lab::RunConfig;

/// Reduced config used by the desk end-to-end runs.
pub const DESK: &str = include_str!("../../../configs/desk-point-mass.cfg");

pub fn desk_config() -> RunConfig {
    RunConfig::parse(DESK).expect("desk config parses")
}

/// Trainer with a buffer of random-action data and untrained networks.
pub fn warmed_trainer(config: RunConfig) -> Trainer {
    let cfg = RunConfig { pretrain_updates: 0, ..config };
    let mut t = Trainer::new(cfg).expect("valid config");
    t.pretrain().expect("pretraining fills the buffer");
    t
}
