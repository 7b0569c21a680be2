//! Training loop, replay, metrics, checkpoints and experiment drivers.

mod buffer;
mod checkpoint;
mod config;
mod experiment;
mod metrics;
mod plot;
mod trainer;

pub use buffer::{ReplayBuffer, TransitionRecord};
pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use experiment::{
    run_ablation, run_experiment, run_name, AblationRun, AblationSpec, Arm, RunReport, CHECKPOINT_FILE, CONFIG_FILE, METRICS_FILE, SUMMARY_FILE,
};
pub use metrics::{parse_metrics, read_metrics, MetricsRow, MetricsWriter, METRICS_COLUMNS, METRICS_VERSION_LINE};
pub use plot::{band, emit_plots, group_label, render_svg, Band};
pub use trainer::{
    collect_step, evaluate_planner_return, evaluate_true_value, evaluate_value_estimate, stream, train_step, BetaGate, CollectOutcome, EvalReport,
    Optimizers, TrainStats, Trainer, RANDOM_MU_STD,
};
