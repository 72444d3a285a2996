use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fair_gne_harness::{compute_experiment, ExperimentConfig, MethodSpec, RunArtifact};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fair-gne"))
}

fn repo_file(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("small.toml");
    std::fs::write(
        &path,
        r#"
seeds = [0, 1]
cadence = "appendix"
eval_episodes = 4
workers = 1

[train]
episodes = 300
eval_every = 100
eval_episodes = 2

[[methods]]
kind = "fixed_gini"
lambda = 0.0

[[methods]]
kind = "fair_gne"
tau = 0.75
"#,
    )
    .unwrap();
    path
}

#[test]
fn oracle_suite_passes_and_failures_exit_3() {
    let ok = run(bin().arg("oracle").arg(repo_file("configs/oracle_suite.toml")));
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stdout));
    let stdout = String::from_utf8(ok.stdout).unwrap();
    assert!(stdout.contains("PASS  chore") && stdout.contains("switching lambda 0.2000"), "{stdout}");

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[[game]]\nname = \"wrong\"\nkind = \"chore\"\ntau = 0.9\nswitching_lambda = 0.5\n").unwrap();
    assert_eq!(run(bin().arg("oracle").arg(&bad)).status.code(), Some(3));
}

#[test]
fn config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let broken = dir.path().join("broken.toml");
    std::fs::write(&broken, "seeds = [\n").unwrap();
    let out = run(bin().args(["table", "--config"]).arg(&broken));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("configuration"));

    assert_eq!(run(bin().args(["train", "--tau", "1.5"])).status.code(), Some(1));
    assert_eq!(run(bin().args(["train", "--baseline", "median"])).status.code(), Some(1));
    assert_eq!(run(bin().args(["train", "--seeds", "x"])).status.code(), Some(1));
    assert_eq!(run(bin().arg("frobnicate")).status.code(), Some(1));
}

#[test]
fn unwritable_output_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("occupied");
    std::fs::write(&file, "").unwrap();
    let out = run(bin().args(["train", "--episodes", "10", "--seeds", "1", "--out"]).arg(file.join("sub")));
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn train_then_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let train = run(bin()
        .args(["train", "--tau", "0.65", "--cadence", "appendix", "--episodes", "200", "--seeds", "3..5", "--out"])
        .arg(&out));
    assert_eq!(train.status.code(), Some(0), "{}", String::from_utf8_lossy(&train.stderr));
    for seed in [3, 4] {
        for name in ["policy", "train"] {
            assert!(out.join(format!("{name}_fairgne0.65_{seed}.json")).exists());
        }
        let trace = std::fs::read_to_string(out.join(format!("lambda_trace_fairgne0.65_{seed}.csv"))).unwrap();
        assert!(trace.starts_with("iteration,lambda,g_estimate,residual,satisfied"));
        let episodes = std::fs::read_to_string(out.join(format!("episodes_fairgne0.65_{seed}.csv"))).unwrap();
        assert_eq!(episodes.lines().count(), 51);
    }

    let eval_dir = dir.path().join("eval");
    let eval = run(bin()
        .args(["eval", "--episodes-eval", "5", "--policy"])
        .arg(out.join("policy_fairgne0.65_3.json"))
        .arg("--out")
        .arg(&eval_dir));
    assert_eq!(eval.status.code(), Some(0), "{}", String::from_utf8_lossy(&eval.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&eval.stdout).unwrap();
    assert_eq!(summary["n_episodes"], 5);
    let trace = std::fs::read_to_string(eval_dir.join("eval_trace.csv")).unwrap();
    assert!(trace.lines().next().unwrap().starts_with("t,station_0,station_1,station_2,action_0"));
}

#[test]
fn table_writes_artifacts_and_rerenders() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("grid");
    let table = run(bin().arg("table").arg("--config").arg(&cfg).arg("--out").arg(&out));
    assert_eq!(table.status.code(), Some(0), "{}", String::from_utf8_lossy(&table.stderr));
    let printed = String::from_utf8(table.stdout).unwrap();
    assert!(printed.starts_with("| Method | Success | λ | Workload JFI | Constraint Sat. | KKT Sat. |"));
    assert!(printed.contains("Fair-GNE (τ=0.75)"));
    for name in [
        "results.json",
        "table.md",
        "table.csv",
        "episodes_gini0_0.csv",
        "lambda_trace_fairgne0.75_1.csv",
        "trace_gini0_1.csv",
    ] {
        assert!(out.join(name).exists(), "{name}");
    }
    let md = std::fs::read_to_string(out.join("table.md")).unwrap();
    assert_eq!(md, printed);

    let again = dir.path().join("again");
    let rerender = run(bin().arg("table").arg("--from").arg(out.join("results.json")).arg("--out").arg(&again));
    assert_eq!(rerender.status.code(), Some(0));
    assert_eq!(String::from_utf8(rerender.stdout).unwrap(), printed);
    assert_eq!(
        std::fs::read_to_string(again.join("table.csv")).unwrap(),
        std::fs::read_to_string(out.join("table.csv")).unwrap()
    );
}

#[test]
fn experiment_results_are_deterministic_and_independent_of_workers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::load(&small_config(dir.path())).unwrap();
    let a = compute_experiment(&cfg).unwrap();
    let b = compute_experiment(&ExperimentConfig { workers: 2, ..cfg.clone() }).unwrap();
    assert_eq!(a.methods, b.methods);
    assert_eq!(a.table, b.table);
    assert_eq!(a.comparisons, b.comparisons);

    let back: RunArtifact = serde_json::from_str(&serde_json::to_string(&a).unwrap()).unwrap();
    assert_eq!(back.table, a.table);
    let fair = a.method(&MethodSpec::fair_gne(0.75)).unwrap();
    assert_eq!(fair.cells.len(), 2);
    assert_eq!(a.comparisons.len(), 1);
    assert_eq!(a.comparisons[0].result.alpha_adjusted, 0.05);
}
