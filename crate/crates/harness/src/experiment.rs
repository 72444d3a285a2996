use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use fair_gne::learner::{greedy_rollout, train, EvalPoint, TrainReport};
use fair_gne::sim::Simulator;
use fair_gne::stats::{
    aggregate, compare, episode_metrics, summarize_metrics, EpisodeMetrics, EvalSummary, SeedAggregate, TableRow,
    TestResult,
};
use fair_gne::trace::EpisodeTrace;
use fair_gne::{dual::DualRecord, Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, MethodSpec};

/// Outcome of one (method, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub seed: u64,
    pub outcome: CellOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum CellOutcome {
    Ok(Box<CellRun>),
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRun {
    pub summary: EvalSummary,
    pub episodes: Vec<EpisodeMetrics>,
    pub final_lambda: f64,
    /// Multiplier attached to the evaluated policy.
    pub policy_lambda: f64,
    pub selected_evaluation: Option<usize>,
    pub env_steps: u64,
    pub n_states: usize,
    pub training_evaluations: Vec<EvalPoint>,
    #[serde(skip)]
    pub lambda_history: Vec<DualRecord>,
    #[serde(skip)]
    pub sample_trace: Option<EpisodeTrace>,
}

impl CellResult {
    pub fn run(&self) -> Option<&CellRun> {
        match &self.outcome {
            CellOutcome::Ok(run) => Some(run),
            CellOutcome::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub label: String,
    pub spec: MethodSpec,
    pub cells: Vec<CellResult>,
    /// Across-seed aggregate over successful cells.
    pub aggregate: Option<SeedAggregate>,
}

impl MethodResult {
    /// Per-seed values of `f` over successful cells.
    pub fn per_seed(&self, f: impl Fn(&EvalSummary) -> f64) -> Vec<f64> {
        self.cells.iter().filter_map(CellResult::run).map(|r| f(&r.summary)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub method: String,
    pub baseline: String,
    /// Compared metric (per-seed terminal workload JFI).
    pub metric: String,
    pub result: TestResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifact {
    pub config: ExperimentConfig,
    pub methods: Vec<MethodResult>,
    pub comparisons: Vec<Comparison>,
    pub table: Vec<TableRow>,
    pub cohens_d_pooling: String,
}

impl RunArtifact {
    pub fn method(&self, spec: &MethodSpec) -> Option<&MethodResult> {
        self.methods.iter().find(|m| &m.spec == spec)
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Interface(format!("cannot write {}: {e}", path.display()))
}

/// Fails unless `dir` can be created and written to.
pub fn check_writable(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let probe = dir.join(".write_probe");
    fs::write(&probe, b"").map_err(|e| io_err(&probe, e))?;
    fs::remove_file(&probe).map_err(|e| io_err(&probe, e))
}

fn eval_seed(seed: u64, episode: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(episode as u64)
}

/// Trains one cell and evaluates the selected greedy policy.
pub fn run_cell(
    config: &ExperimentConfig,
    env: &Simulator,
    method: &MethodSpec,
    seed: u64,
) -> Result<(TrainReport, CellRun)> {
    let train_cfg = config.cell_config(method, seed)?;
    let report = train(env, &train_cfg)?;
    let tau = train_cfg.metric_tau();
    let mut sample_trace = None;
    let episodes = (0..config.eval_episodes)
        .map(|i| {
            let trace = greedy_rollout(&report.policy, env, eval_seed(seed, i))?;
            let m = episode_metrics(&trace, tau, train_cfg.gamma, fair_gne::dual::DEFAULT_KKT_EPSILON)?;
            if i == 0 {
                sample_trace = Some(trace);
            }
            Ok(m)
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize_metrics(&episodes)?;
    let run = CellRun {
        summary,
        episodes,
        final_lambda: report.final_lambda,
        policy_lambda: report.policy.lambda,
        selected_evaluation: report.selected_evaluation,
        env_steps: report.env_steps,
        n_states: report.n_states,
        training_evaluations: report.evaluations.clone(),
        lambda_history: report.lambda_history.clone(),
        sample_trace,
    };
    Ok((report, run))
}

fn lambda_label(spec: &MethodSpec, agg: Option<&SeedAggregate>) -> String {
    match (spec, agg) {
        (MethodSpec::None, _) => "0 (fixed)".into(),
        (MethodSpec::FixedGini { lambda }, _) => format!("{lambda} (fixed)"),
        (MethodSpec::FairGne { .. }, Some(a)) => format!("{:.2} ± {:.2}", a.lambda.mean, a.lambda.std),
        (MethodSpec::FairGne { .. }, None) => "–".into(),
    }
}

/// Runs every (method, seed) cell, aggregates, compares and writes all artifacts.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunArtifact> {
    config.validate()?;
    check_writable(&config.out)?;
    let artifact = compute_experiment(config)?;
    write_artifacts(&artifact, &config.out)?;
    Ok(artifact)
}

/// Runs the grid without touching the filesystem.
pub fn compute_experiment(config: &ExperimentConfig) -> Result<RunArtifact> {
    config.validate()?;
    let env = Simulator::new(config.env.clone())?;
    let cells: Vec<(usize, u64)> =
        (0..config.methods.len()).flat_map(|m| config.seeds.iter().map(move |&s| (m, s))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.worker_count())
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<CellResult> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(m, seed)| {
                let outcome = match run_cell(config, &env, &config.methods[m], seed) {
                    Ok((_, run)) => CellOutcome::Ok(Box::new(run)),
                    Err(e) => CellOutcome::Failed { error: e.to_string() },
                };
                CellResult { seed, outcome }
            })
            .collect()
    });

    let mut outcomes = outcomes.into_iter();
    let methods: Vec<MethodResult> = config
        .methods
        .iter()
        .map(|spec| {
            let cells: Vec<CellResult> = outcomes.by_ref().take(config.seeds.len()).collect();
            let summaries: Vec<EvalSummary> =
                cells.iter().filter_map(CellResult::run).map(|r| r.summary.clone()).collect();
            MethodResult { label: spec.label(), spec: *spec, aggregate: aggregate(&summaries).ok(), cells }
        })
        .collect();

    let baselines: Vec<&MethodResult> = methods.iter().filter(|m| m.spec.is_baseline()).collect();
    let mut comparisons = Vec::new();
    let mut table = Vec::new();
    for m in &methods {
        let mut best_test: Option<(f64, TestResult)> = None;
        if !m.spec.is_baseline() {
            let ours = m.per_seed(|s| s.mean_jfi);
            for b in &baselines {
                let theirs = b.per_seed(|s| s.mean_jfi);
                if let Ok(result) = compare(&ours, &theirs, config.significance_alpha, baselines.len()) {
                    let baseline_jfi = b.aggregate.as_ref().map_or(f64::NEG_INFINITY, |a| a.jfi.mean);
                    if best_test.as_ref().is_none_or(|(jfi, _)| baseline_jfi > *jfi) {
                        best_test = Some((baseline_jfi, result));
                    }
                    comparisons.push(Comparison {
                        method: m.label.clone(),
                        baseline: b.label.clone(),
                        metric: "terminal_jfi".into(),
                        result,
                    });
                }
            }
        }
        table.push(TableRow {
            method: m.label.clone(),
            lambda_label: lambda_label(&m.spec, m.aggregate.as_ref()),
            aggregate: m.aggregate.clone().unwrap_or_default(),
            test: best_test.map(|(_, t)| t),
        });
    }

    Ok(RunArtifact {
        config: config.clone(),
        methods,
        comparisons,
        table,
        cohens_d_pooling: "pooled standard deviation with (n_a - 1, n_b - 1) weights".into(),
    })
}

pub fn write_file(path: PathBuf, body: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<()> {
    let file = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
    let mut out = BufWriter::new(file);
    body(&mut out).and_then(|_| out.flush()).map_err(|e| io_err(&path, e))
}

pub fn write_episodes_csv<W: Write>(mut out: W, episodes: &[EpisodeMetrics]) -> std::io::Result<()> {
    writeln!(out, "episode,success,total_reward,terminal_jfi,mean_step_jfi,lambda,discounted_g,constraint_satisfied,kkt_residual,kkt_satisfied")?;
    for (i, e) in episodes.iter().enumerate() {
        writeln!(
            out,
            "{i},{},{},{},{},{},{},{},{},{}",
            e.success,
            e.total_reward,
            e.terminal_jfi,
            e.mean_step_jfi,
            e.lambda,
            e.discounted_g,
            e.constraint_satisfied,
            e.kkt.residual,
            e.kkt.satisfied
        )?;
    }
    Ok(())
}

pub fn write_lambda_csv<W: Write>(mut out: W, history: &[DualRecord]) -> std::io::Result<()> {
    writeln!(out, "iteration,lambda,g_estimate,residual,satisfied")?;
    for r in history {
        writeln!(out, "{},{},{},{},{}", r.iteration, r.lambda, r.g_estimate, r.residual, r.satisfied)?;
    }
    Ok(())
}

pub fn write_artifacts(artifact: &RunArtifact, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let write = |name: &str, body: &str| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| io_err(&path, e))
    };
    let json = serde_json::to_string_pretty(artifact).map_err(|e| Error::Interface(e.to_string()))?;
    write("results.json", &json)?;
    write("table.md", &fair_gne::stats::render_markdown(&artifact.table))?;
    write("table.csv", &fair_gne::stats::render_csv(&artifact.table))?;
    for m in &artifact.methods {
        for cell in &m.cells {
            let Some(run) = cell.run() else { continue };
            let slug = m.spec.slug();
            let seed = cell.seed;
            write_file(dir.join(format!("episodes_{slug}_{seed}.csv")), |w| write_episodes_csv(w, &run.episodes))?;
            if !m.spec.is_baseline() {
                write_file(dir.join(format!("lambda_trace_{slug}_{seed}.csv")), |w| {
                    write_lambda_csv(w, &run.lambda_history)
                })?;
            }
            if let Some(trace) = &run.sample_trace {
                write_file(dir.join(format!("trace_{slug}_{seed}.csv")), |w| trace.write_csv(w))?;
            }
        }
    }
    Ok(())
}
