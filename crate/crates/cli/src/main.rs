use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use tdmpc_lab::envs::{GraphWorld, GraphWorldConfig};
use tdmpc_lab::harness::{emit_plots, run_ablation, run_experiment, AblationSpec, Arm, Checkpoint, RunConfig, Trainer, METRICS_FILE};
use tdmpc_lab::theory::{self, BoundReport, SweepConfig};
use tdmpc_lab::Variant;

#[derive(Parser)]
#[command(name = "tdmpc-lab", version, about = "Latent-model MPC with a constrained nominal policy, plus an exact tabular bound lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run and write metrics, checkpoints and a summary.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = parse_variant)]
        variant: Option<Variant>,
        #[arg(long)]
        seed: Option<u64>,
        /// Override the number of planner-driven environment steps.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value = "runs/train")]
        out: PathBuf,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 20)]
        episodes: usize,
    },
    /// Verify the tabular bounds on random MDPs with exact solvers.
    TheoryCheck {
        #[arg(long, value_enum, default_value_t = Theorem::All)]
        theorem: Theorem,
        /// Number of random MDPs per sweep (defaults per theorem).
        #[arg(long)]
        mdps: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write every evaluated case to this CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Simulate the value-calibration lag on the oriented graph world.
    ToyGraph {
        #[arg(long, default_value_t = 0.5)]
        delta: f64,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
    },
    /// Run a variant × horizon × seed sweep with one CSV per run.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated β values, with `bc` for the behavior-cloning variant.
        #[arg(long, default_value = "0,0.05,1,bc")]
        betas: String,
        #[arg(long, value_delimiter = ',')]
        horizons: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value = "runs/ablate")]
        out: PathBuf,
        /// Skip writing SVG plots of the sweep.
        #[arg(long)]
        no_plots: bool,
    },
    /// Render SVG charts from metrics CSVs.
    Plot {
        #[arg(long = "in", num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Theorem {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    #[value(name = "3")]
    Three,
    #[value(name = "lemma-a2")]
    LemmaA2,
    All,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    Variant::parse(s).map_err(|e| e.to_string())
}

fn load_config(path: Option<&PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

fn summarize(reports: &[BoundReport]) -> (usize, f64) {
    let held = reports.iter().filter(|r| r.holds).count();
    let min_slack = reports.iter().map(|r| r.slack()).fold(f64::INFINITY, f64::min);
    (held, min_slack)
}

fn theory_check(theorem: Theorem, mdps: Option<usize>, seed: u64, csv: Option<PathBuf>) -> Result<bool> {
    let base = SweepConfig { seed, ..SweepConfig::default() };
    let mut all: Vec<BoundReport> = Vec::new();
    let mut ok = true;
    let mut run = |name: &str, reports: Vec<BoundReport>, all: &mut Vec<BoundReport>| {
        let (held, slack) = summarize(&reports);
        let pass = held == reports.len();
        ok &= pass;
        println!("{name}: {held}/{} hold, min slack {slack:.3e} [{}]", reports.len(), if pass { "PASS" } else { "FAIL" });
        all.extend(reports);
    };
    let pick = |t: Theorem| theorem == Theorem::All || theorem == t;
    if pick(Theorem::Three) {
        run("theorem3", theory::sweep_theorem3(&base.clone().with_mdps(mdps.unwrap_or(200)))?, &mut all);
    }
    if pick(Theorem::One) {
        run("theorem1", theory::sweep_theorem1(&base.clone().with_mdps(mdps.unwrap_or(100)), &[1, 2, 3], &[0.1, 0.5, 1.0])?, &mut all);
    }
    if pick(Theorem::Two) {
        run("theorem2", theory::sweep_theorem2(&base.clone().with_mdps(mdps.unwrap_or(50)), &[1, 3], 20)?, &mut all);
    }
    if pick(Theorem::LemmaA2) {
        run("lemma-a2", theory::sweep_lemma_greedy(&base.clone().with_mdps(mdps.unwrap_or(200)))?, &mut all);
    }
    if let Some(p) = csv {
        let f = std::fs::File::create(&p).with_context(|| format!("creating {}", p.display()))?;
        theory::write_reports_csv(std::io::BufWriter::new(f), &all)?;
    }
    Ok(ok)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train { config, variant, seed, steps, out, resume } => {
            let mut cfg = load_config(config.as_ref())?;
            if let Some(v) = variant {
                cfg.variant = v;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(s) = steps {
                cfg.steps = s;
            }
            let report = run_experiment(&cfg, &out, resume).with_context(|| format!("run in {} failed; partial metrics were kept", out.display()))?;
            print!("{report}");
            println!("metrics = {}", out.join(METRICS_FILE).display());
        }
        Command::Eval { checkpoint, episodes } => {
            let ck = Checkpoint::read(&checkpoint).with_context(|| format!("reading {}", checkpoint.display()))?;
            let mut t = Trainer::from_checkpoint(&ck)?;
            let r = t.evaluate(episodes)?;
            println!("episodes = {}", r.episodes);
            println!("env_steps = {}", t.collected);
            println!("planner_return = {}", r.planner_return);
            println!("policy_return = {}", r.policy_return);
            println!("true_value = {}", r.true_value);
            println!("value_estimate = {}", r.value_estimate);
            println!("error_ratio = {}", r.error_ratio);
        }
        Command::TheoryCheck { theorem, mdps, seed, csv } => return theory_check(theorem, mdps, seed, csv),
        Command::ToyGraph { delta, episodes } => {
            let gw = GraphWorld::new(GraphWorldConfig::default())?;
            let r = theory::graph_world_mismatch(&gw, delta, episodes)?;
            let name = |s: usize| ["L", "R", "A", "B", "G", "P"][s];
            let path = |p: &[usize]| p.iter().map(|s| name(*s)).collect::<Vec<_>>().join(" -> ");
            println!("delta = {}", r.delta);
            println!("episodes = {}", r.episodes);
            println!("lookahead_path = {}", path(&r.lookahead_path));
            println!("lookahead_visited_poor = {}", r.lookahead_visited_poor);
            println!("lookahead_residual_error = {}", r.lookahead_residual_error);
            println!("greedy_path = {}", path(&r.greedy_path));
            println!("greedy_first_visit = {}", r.greedy_first_visit.map_or("never".to_string(), |e| e.to_string()));
            println!("greedy_residual_error = {}", r.greedy_residual_error);
            println!("right_choice_before = {}", name(r.right_choice_before));
            println!("right_choice_after = {}", name(r.right_choice_after));
        }
        Command::Ablate { config, betas, horizons, seeds, steps, out, no_plots } => {
            let mut cfg = load_config(config.as_ref())?;
            if let Some(s) = steps {
                cfg.steps = s;
            }
            let spec = AblationSpec { arms: Arm::parse_list(&betas)?, horizons: horizons.unwrap_or_else(|| vec![cfg.planner.horizon]), seeds };
            let runs = run_ablation(&cfg, &spec, &out, |r| {
                println!(
                    "{}: final_return = {} error_ratio = {} ({} steps)",
                    r.name, r.report.final_return, r.report.final_error_ratio, r.report.env_steps
                )
            })?;
            println!("summary = {}", out.join("ablation.csv").display());
            if !no_plots {
                let csvs: Vec<PathBuf> = runs.iter().map(|r| r.dir.join(METRICS_FILE)).collect();
                for p in emit_plots(&csvs, &out.join("plots"))? {
                    println!("plot = {}", p.display());
                }
            }
        }
        Command::Plot { inputs, out } => {
            for p in emit_plots(&inputs, &out)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
