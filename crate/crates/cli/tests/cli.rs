use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
env.name = point-mass-chain
env.dim = 2
run.steps = 200
run.batch_size = 8
run.pretrain_steps = 200
run.pretrain_updates = 10
run.log_interval = 100
run.checkpoint_interval = 100
eval.episodes = 2
eval.planner_episodes = 1
eval.value_samples = 8
model.latent_dim = 8
model.encoder_hidden = 16
model.dynamics_hidden = 16
model.head_hidden = 16
policy.hidden = 16
planner.samples = 16
planner.elites = 4
planner.iterations = 2
planner.policy_rollouts = 2
";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tdmpc-lab"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("tiny.cfg");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn train_is_reproducible_and_checkpoint_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let train = |out: &str| run(bin().arg("train").arg("--config").arg(&cfg).args(["--seed", "3", "--out"]).arg(dir.path().join(out)));
    let a = train("a");
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert!(stdout(&a).contains("final_error_ratio = "));
    let b = train("b");
    assert!(b.status.success());
    let ma = fs::read(dir.path().join("a/metrics.csv")).unwrap();
    assert_eq!(ma, fs::read(dir.path().join("b/metrics.csv")).unwrap());
    assert!(String::from_utf8_lossy(&ma).starts_with("# tdmpc-lab metrics v1\nenv_step,"));

    let e = run(bin().arg("eval").arg("--checkpoint").arg(dir.path().join("a/checkpoint.ckpt")).args(["--episodes", "2"]));
    assert!(e.status.success(), "{}", String::from_utf8_lossy(&e.stderr));
    let text = stdout(&e);
    assert!(text.contains("env_steps = 200"), "{text}");
    assert!(text.contains("error_ratio = "));

    let p = run(bin().arg("plot").arg("--in").arg(dir.path().join("a/metrics.csv")).arg("--out").arg(dir.path().join("plots")));
    assert!(p.status.success());
    for name in ["return.svg", "value.svg", "error_ratio.svg"] {
        let svg = fs::read_to_string(dir.path().join("plots").join(name)).unwrap();
        assert!(svg.contains("<svg") && svg.trim_end().ends_with("</svg>"), "{name}");
    }
}

#[test]
fn variant_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &TINY.replace("run.steps = 200", "run.steps = 20").replace("run.checkpoint_interval = 100", "run.checkpoint_interval = 0"),
    );
    let o = run(bin().arg("train").arg("--config").arg(&cfg).args(["--variant", "bc", "--out"]).arg(dir.path().join("r")));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(fs::read_to_string(dir.path().join("r/config.txt")).unwrap().contains("run.variant = bc"));
}

#[test]
fn unknown_config_key_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{TINY}planner.horizn = 3\n"));
    let o = run(bin().arg("train").arg("--config").arg(&cfg).arg("--out").arg(dir.path().join("r")));
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("planner.horizn"), "{err}");
    assert!(!dir.path().join("r/metrics.csv").exists());
}

#[test]
fn bad_variant_is_rejected_by_the_parser() {
    let o = run(bin().args(["train", "--variant", "greedy"]));
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("greedy"));
}

#[test]
fn theory_check_passes_small_sweeps() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("cases.csv");
    let o = run(bin().args(["theory-check", "--theorem", "all", "--mdps", "6", "--csv"]).arg(&csv));
    assert!(o.status.success(), "{}", stdout(&o));
    let text = stdout(&o);
    for name in ["theorem1", "theorem2", "theorem3", "lemma-a2"] {
        assert!(text.contains(&format!("{name}: ")), "{text}");
    }
    assert!(!text.contains("FAIL"));
    assert!(fs::read_to_string(&csv).unwrap().lines().count() > 6);
}

#[test]
fn toy_graph_reports_the_trap() {
    let o = run(bin().args(["toy-graph", "--delta", "0.5", "--episodes", "100"]));
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("lookahead_visited_poor = false"), "{text}");
    assert!(text.contains("lookahead_residual_error = 0.5"));
    assert!(text.contains("greedy_first_visit = 1"));
    assert!(text.contains("right_choice_before = P"));
}

#[test]
fn ablate_writes_runs_summary_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &TINY.replace("run.checkpoint_interval = 100", "run.checkpoint_interval = 0"));
    let out = dir.path().join("abl");
    let o = run(bin().arg("ablate").arg("--config").arg(&cfg).args(["--betas", "0,bc", "--horizons", "1,3", "--steps", "40", "--out"]).arg(&out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5, "{summary}");
    assert!(out.join("plots/error_ratio.svg").exists());
}

#[test]
fn missing_checkpoint_exits_with_error() {
    let o = run(bin().args(["eval", "--checkpoint", "/nonexistent/run.ckpt"]));
    assert_eq!(o.status.code(), Some(2));
}
