use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fair_gne::dual::{CadencePreset, DEFAULT_KKT_EPSILON};
use fair_gne::learner::{greedy_rollout, GreedyPolicy};
use fair_gne::sim::Simulator;
use fair_gne::stats::{episode_metrics, render_csv, render_markdown, summarize_metrics};
use fair_gne::Error;
use fair_gne_harness::experiment::{
    check_writable, run_cell, run_experiment, write_episodes_csv, write_file, write_lambda_csv, CellOutcome,
    RunArtifact,
};
use fair_gne_harness::{run_oracle_suite, ExperimentConfig, MethodSpec};

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_SUITE: u8 = 3;

#[derive(Parser)]
#[command(name = "fair-gne", version, about = "Fairness-constrained multi-agent learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one method over the configured seeds and write per-seed artifacts.
    Train(TrainArgs),
    /// Roll out a saved greedy policy and summarize the episodes.
    Eval(EvalArgs),
    /// Run the exact-oracle validation suite.
    Oracle(OracleArgs),
    /// Run the full method grid and emit the comparison table.
    Table(TableArgs),
}

#[derive(Args, Clone)]
struct Overrides {
    /// Experiment configuration file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Fairness threshold for the Fair-GNE method.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    eta_lambda: Option<f64>,
    #[arg(long)]
    lambda_max: Option<f64>,
    /// Dual update cadence: main-text or appendix.
    #[arg(long)]
    cadence: Option<CadencePreset>,
    /// Seed list such as `0,1,2`, a range `0..5`, or a count `3` meaning `0..3`.
    #[arg(long)]
    seeds: Option<String>,
    /// Training episodes per cell.
    #[arg(long)]
    episodes: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Overrides,
    /// Train a baseline instead of Fair-GNE: `none` or `gini:<lambda>`.
    #[arg(long)]
    baseline: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    /// Policy file written by `train`.
    #[arg(long)]
    policy: PathBuf,
    #[command(flatten)]
    common: Overrides,
    /// Number of greedy episodes.
    #[arg(long, default_value_t = 50)]
    episodes_eval: usize,
}

#[derive(Args)]
struct OracleArgs {
    /// Suite file (TOML) declaring the finite games.
    suite: PathBuf,
    /// Directory for certificate JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TableArgs {
    #[command(flatten)]
    common: Overrides,
    /// Re-render the table from an existing results.json instead of training.
    #[arg(long)]
    from: Option<PathBuf>,
}

fn parse_seeds(text: &str) -> Result<Vec<u64>, Error> {
    let bad = || Error::Config(format!("cannot parse seeds {text:?}"));
    if let Some((a, b)) = text.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        return if a < b { Ok((a..b).collect()) } else { Err(bad()) };
    }
    if !text.contains(',') {
        let n: u64 = text.trim().parse().map_err(|_| bad())?;
        return if n > 0 { Ok((0..n).collect()) } else { Err(bad()) };
    }
    text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

fn parse_baseline(text: &str) -> Result<MethodSpec, Error> {
    match text.split_once(':') {
        None if text == "none" => Ok(MethodSpec::None),
        Some(("gini", l)) => l
            .parse()
            .map(|lambda| MethodSpec::FixedGini { lambda })
            .map_err(|_| Error::Config(format!("bad gini weight {l:?}"))),
        _ => Err(Error::Config(format!("baseline must be `none` or `gini:<lambda>`, got {text:?}"))),
    }
}

fn load_config(o: &Overrides) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &o.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(c) = o.cadence {
        cfg.cadence = c;
    }
    if let Some(s) = &o.seeds {
        cfg.seeds = parse_seeds(s)?;
    }
    if let Some(e) = o.episodes {
        cfg.train.episodes = e;
    }
    if let Some(out) = &o.out {
        cfg.out = out.clone();
    }
    for m in &mut cfg.methods {
        if let MethodSpec::FairGne { eta_lambda, lambda_max, .. } = m {
            *eta_lambda = o.eta_lambda.or(*eta_lambda);
            *lambda_max = o.lambda_max.or(*lambda_max);
        }
    }
    Ok(cfg)
}

fn fair_gne_method(o: &Overrides, cfg: &ExperimentConfig) -> MethodSpec {
    let from_grid = cfg.methods.iter().find(|m| !m.is_baseline()).copied();
    let mut m = from_grid.unwrap_or(MethodSpec::fair_gne(0.85));
    if let MethodSpec::FairGne { tau, eta_lambda, lambda_max, .. } = &mut m {
        *tau = o.tau.unwrap_or(*tau);
        *eta_lambda = o.eta_lambda.or(*eta_lambda);
        *lambda_max = o.lambda_max.or(*lambda_max);
    }
    m
}

fn exit_for(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Domain(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

fn cmd_train(args: &TrainArgs) -> Result<(), Error> {
    let mut cfg = load_config(&args.common)?;
    let method = match &args.baseline {
        Some(b) => parse_baseline(b)?,
        None => fair_gne_method(&args.common, &cfg),
    };
    cfg.methods = vec![method];
    cfg.validate()?;
    check_writable(&cfg.out)?;
    let env = Simulator::new(cfg.env.clone())?;
    let slug = method.slug();
    for &seed in &cfg.seeds {
        let (report, run) = run_cell(&cfg, &env, &method, seed)?;
        write(&cfg.out.join(format!("policy_{slug}_{seed}.json")), &to_json(&report.policy))?;
        write(&cfg.out.join(format!("train_{slug}_{seed}.json")), &to_json(&report))?;
        write_file(cfg.out.join(format!("episodes_{slug}_{seed}.csv")), |w| write_episodes_csv(w, &run.episodes))?;
        if !method.is_baseline() {
            write_file(cfg.out.join(format!("lambda_trace_{slug}_{seed}.csv")), |w| {
                write_lambda_csv(w, &run.lambda_history)
            })?;
        }
        let s = &run.summary;
        println!(
            "{} seed {seed}: success {:.2}  jfi {:.3}  lambda {:.3}  constraint {:.2}  kkt {:.2}",
            method.label(),
            s.success_rate,
            s.mean_jfi,
            s.mean_lambda,
            s.constraint_sat_rate,
            s.kkt_sat_rate
        );
    }
    Ok(())
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable")
}

fn write(path: &Path, body: &str) -> Result<(), Error> {
    std::fs::write(path, body).map_err(|e| Error::Interface(format!("cannot write {}: {e}", path.display())))
}

fn cmd_eval(args: &EvalArgs) -> Result<(), Error> {
    let cfg = load_config(&args.common)?;
    let text = std::fs::read_to_string(&args.policy)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", args.policy.display())))?;
    let policy: GreedyPolicy =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("bad policy file: {e}")))?;
    let env = Simulator::new(cfg.env.clone())?;
    let tau = policy.tau;
    let metrics = (0..args.episodes_eval as u64)
        .map(|s| episode_metrics(&greedy_rollout(&policy, &env, s)?, tau, cfg.train.gamma, DEFAULT_KKT_EPSILON))
        .collect::<Result<Vec<_>, _>>()?;
    let summary = summarize_metrics(&metrics)?;
    println!("{}", to_json(&summary));
    if let Some(out) = &args.common.out {
        check_writable(out)?;
        write(&out.join("eval_summary.json"), &to_json(&summary))?;
        let trace = greedy_rollout(&policy, &env, 0)?;
        let path = out.join("eval_trace.csv");
        let file = std::fs::File::create(&path).map_err(|e| Error::Interface(e.to_string()))?;
        trace.write_csv(std::io::BufWriter::new(file)).map_err(|e| Error::Interface(e.to_string()))?;
    }
    Ok(())
}

fn cmd_oracle(args: &OracleArgs) -> Result<bool, Error> {
    let report = run_oracle_suite(&args.suite)?;
    for case in &report.cases {
        let mark = if case.passed() { "PASS" } else { "FAIL" };
        let lambda = case.switching_lambda().map_or(String::from("-"), |l| format!("{l:.4}"));
        println!("{mark}  {}  ({} profiles, switching lambda {lambda})", case.name, case.n_profiles);
        if let Some(e) = &case.error {
            println!("      error: {e}");
        }
        for c in case.checks.iter().filter(|c| !c.passed) {
            println!("      failed: {} ({})", c.name, c.detail);
        }
    }
    if let Some(out) = &args.out {
        check_writable(out)?;
        write(&out.join("oracle_report.json"), &to_json(&report))?;
    }
    Ok(report.passed())
}

fn print_table(artifact: &RunArtifact) {
    print!("{}", render_markdown(&artifact.table));
    for m in &artifact.methods {
        for cell in &m.cells {
            if let CellOutcome::Failed { error } = &cell.outcome {
                eprintln!("cell {} seed {} failed: {error}", m.label, cell.seed);
            }
        }
    }
}

fn cmd_table(args: &TableArgs) -> Result<(), Error> {
    if let Some(from) = &args.from {
        let text =
            std::fs::read_to_string(from).map_err(|e| Error::Config(format!("cannot read {}: {e}", from.display())))?;
        let artifact: RunArtifact =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("bad results file: {e}")))?;
        print_table(&artifact);
        if let Some(out) = &args.common.out {
            check_writable(out)?;
            write(&out.join("table.md"), &render_markdown(&artifact.table))?;
            write(&out.join("table.csv"), &render_csv(&artifact.table))?;
        }
        return Ok(());
    }
    let mut cfg = load_config(&args.common)?;
    if let Some(t) = args.common.tau {
        for m in &mut cfg.methods {
            if let MethodSpec::FairGne { tau, .. } = m {
                *tau = t;
            }
        }
    }
    let artifact = run_experiment(&cfg)?;
    print_table(&artifact);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Table(a) => cmd_table(a),
        Command::Oracle(a) => match cmd_oracle(a) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(EXIT_SUITE),
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_for(&e))
        }
    }
}
