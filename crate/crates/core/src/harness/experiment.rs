use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use super::metrics::{MetricsRow, MetricsWriter};
use super::trainer::Trainer;
use crate::error::{Error, Result};
use crate::policy::Variant;

pub const CONFIG_FILE: &str = "config.txt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const SUMMARY_FILE: &str = "summary.txt";

/// Final summary of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub env_steps: u64,
    pub updates: u64,
    pub rows: u64,
    /// Evaluation return of the last row, or the last training episode
    /// return when planner evaluation is off.
    pub final_return: f64,
    pub best_return: f64,
    pub final_value_estimate: f64,
    pub final_true_value: f64,
    pub final_error_ratio: f64,
}

impl RunReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in [
            ("env_steps", self.env_steps.to_string()),
            ("updates", self.updates.to_string()),
            ("rows", self.rows.to_string()),
            ("final_return", self.final_return.to_string()),
            ("best_return", self.best_return.to_string()),
            ("final_value_estimate", self.final_value_estimate.to_string()),
            ("final_true_value", self.final_true_value.to_string()),
            ("final_error_ratio", self.final_error_ratio.to_string()),
        ] {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }
}

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

fn row_return(r: &MetricsRow) -> f64 {
    if r.eval_return.is_finite() {
        r.eval_return
    } else {
        r.episode_return
    }
}

/// Trains one run into `out_dir`, writing the config, the metrics CSV,
/// checkpoints and a summary. With `resume`, continues from the
/// checkpoint in `out_dir` when there is one.
pub fn run_experiment(config: &RunConfig, out_dir: &Path, resume: bool) -> Result<RunReport> {
    config.validate()?;
    fs::create_dir_all(out_dir)?;
    let metrics_path = out_dir.join(METRICS_FILE);
    let ckpt_path = out_dir.join(CHECKPOINT_FILE);

    let (mut trainer, mut writer) = if resume && ckpt_path.exists() {
        let t = Trainer::from_checkpoint(&Checkpoint::read(&ckpt_path)?)?;
        if t.config != *config {
            return Err(Error::config(format!("checkpoint in {} was written with a different config", out_dir.display())));
        }
        let w = MetricsWriter::resume(&metrics_path, t.rows_logged as usize)?;
        (t, w)
    } else {
        fs::write(out_dir.join(CONFIG_FILE), config.to_text())?;
        (Trainer::new(config.clone())?, MetricsWriter::create(&metrics_path)?)
    };

    let mut last: Option<MetricsRow> = None;
    let mut best = f64::NEG_INFINITY;
    if resume {
        for r in super::metrics::read_metrics(&metrics_path)? {
            best = best.max(row_return(&r));
            last = Some(r);
        }
    }
    let mut log = |t: &mut Trainer, last: &mut Option<MetricsRow>, best: &mut f64| -> Result<()> {
        let row = t.log_row()?;
        writer.write(&row)?;
        let r = row_return(&row);
        if r.is_finite() {
            *best = best.max(r);
        }
        *last = Some(row);
        Ok(())
    };

    trainer.pretrain()?;
    let steps = config.steps as u64;
    let interval = config.checkpoint_interval as u64;
    let mut next_ckpt = trainer.collected.checked_div(interval).map_or(u64::MAX, |k| (k + 1) * interval);
    while trainer.collected < steps {
        trainer.step()?;
        if trainer.collected % config.log_interval as u64 == 0 {
            log(&mut trainer, &mut last, &mut best)?;
        }
        if trainer.collected >= next_ckpt && trainer.at_episode_start() {
            trainer.to_checkpoint()?.write(&ckpt_path)?;
            next_ckpt = (trainer.collected / interval + 1) * interval;
        }
    }
    if last.as_ref().is_none_or(|r| r.env_step != trainer.collected) {
        log(&mut trainer, &mut last, &mut best)?;
    }
    if interval > 0 && trainer.at_episode_start() {
        trainer.to_checkpoint()?.write(&ckpt_path)?;
    }

    let last = last.expect("at least one row is logged");
    let report = RunReport {
        env_steps: trainer.collected,
        updates: trainer.updates,
        rows: trainer.rows_logged,
        final_return: row_return(&last),
        best_return: if best.is_finite() { best } else { f64::NAN },
        final_value_estimate: last.value_estimate,
        final_true_value: last.true_value,
        final_error_ratio: last.error_ratio,
    };
    fs::write(out_dir.join(SUMMARY_FILE), report.to_text())?;
    Ok(report)
}

/// One arm of an ablation: a variant with its `β`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Arm {
    Beta(f64),
    Bc,
}

impl Arm {
    /// Parses a `--betas` list such as `0,0.05,1,bc`.
    pub fn parse_list(s: &str) -> Result<Vec<Arm>> {
        s.split(',')
            .map(|t| match t.trim() {
                "bc" => Ok(Arm::Bc),
                x => match x.parse::<f64>() {
                    Ok(b) if b >= 0.0 && b.is_finite() => Ok(Arm::Beta(b)),
                    _ => Err(Error::config(format!("'{x}' is neither a non-negative β nor 'bc'"))),
                },
            })
            .collect()
    }

    pub fn label(&self) -> String {
        match self {
            Arm::Beta(b) => format!("beta{b}"),
            Arm::Bc => "bc".into(),
        }
    }

    /// `β = 0` is the unconstrained baseline.
    pub fn apply(&self, cfg: &mut RunConfig) {
        match *self {
            Arm::Beta(0.0) => cfg.variant = Variant::BaselineB0,
            Arm::Beta(b) => {
                cfg.variant = Variant::Constrained;
                cfg.policy.beta = b;
            }
            Arm::Bc => cfg.variant = Variant::Bc,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationSpec {
    pub arms: Vec<Arm>,
    pub horizons: Vec<usize>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRun {
    pub name: String,
    pub arm: Arm,
    pub horizon: usize,
    pub seed: u64,
    pub dir: PathBuf,
    pub report: RunReport,
}

/// Run directory name; runs differing only in seed share the prefix
/// before `_seed`.
pub fn run_name(arm: &Arm, horizon: usize, seed: u64) -> String {
    format!("{}_H{horizon}_seed{seed}", arm.label())
}

/// Runs every arm × horizon × seed combination under `out_dir`, one
/// subdirectory and metrics CSV per run, plus an `ablation.csv` summary.
pub fn run_ablation(base: &RunConfig, spec: &AblationSpec, out_dir: &Path, mut progress: impl FnMut(&AblationRun)) -> Result<Vec<AblationRun>> {
    if spec.arms.is_empty() || spec.horizons.is_empty() || spec.seeds.is_empty() {
        return Err(Error::config("ablation needs at least one arm, horizon and seed"));
    }
    fs::create_dir_all(out_dir)?;
    let mut runs = Vec::new();
    for &h in &spec.horizons {
        for arm in &spec.arms {
            for &seed in &spec.seeds {
                let mut cfg = base.clone();
                arm.apply(&mut cfg);
                cfg.planner.horizon = h;
                cfg.seed = seed;
                let name = run_name(arm, h, seed);
                let dir = out_dir.join(&name);
                let report = run_experiment(&cfg, &dir, false)?;
                let run = AblationRun { name, arm: *arm, horizon: h, seed, dir, report };
                progress(&run);
                runs.push(run);
            }
        }
    }
    let mut w = csv::Writer::from_path(out_dir.join("ablation.csv")).map_err(|e| Error::config(e.to_string()))?;
    let header = ["run", "arm", "horizon", "seed", "final_return", "best_return", "final_value_estimate", "final_true_value", "final_error_ratio"];
    w.write_record(header).map_err(|e| Error::config(e.to_string()))?;
    for r in &runs {
        let p = &r.report;
        w.write_record([
            r.name.clone(),
            r.arm.label(),
            r.horizon.to_string(),
            r.seed.to_string(),
            p.final_return.to_string(),
            p.best_return.to_string(),
            p.final_value_estimate.to_string(),
            p.final_true_value.to_string(),
            p.final_error_ratio.to_string(),
        ])
        .map_err(|e| Error::config(e.to_string()))?;
    }
    w.flush()?;
    Ok(runs)
}
