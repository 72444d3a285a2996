use std::path::Path;

use fair_gne::chore::ChoreGame;
use fair_gne::fairness::FairnessThreshold;
use fair_gne::oracle::{
    exact_dual_ascent, exact_primal, verify_smgne, AscentStatus, DualAscentConfig, DualAscentResult, Evaluation,
    FiniteGame, ProfileValue, DEFAULT_ENUMERATION_CAP,
};
use fair_gne::sim::{ActionPrimitive, EnvConfig};
use fair_gne::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSuite {
    #[serde(rename = "game")]
    pub games: Vec<GameCase>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    /// Some profile is feasible and the constraint binds.
    Feasible,
    /// No profile is feasible; an infeasibility report is expected.
    Infeasible,
    /// The return maximizer is already feasible and the multiplier stays at zero.
    Inactive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameCase {
    pub name: String,
    pub tau: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_lambda_max")]
    pub lambda_max: f64,
    pub expect: Option<Expectation>,
    pub switching_lambda: Option<f64>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(flatten)]
    pub source: GameSource,
}

fn default_eta() -> f64 {
    0.01
}

fn default_max_iter() -> usize {
    100_000
}

fn default_lambda_max() -> f64 {
    20.0
}

fn default_tolerance() -> f64 {
    0.02
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GameSource {
    Chore {
        #[serde(default)]
        game: Option<ChoreGame>,
    },
    /// Payoff and workload tables in profile order (agent 0 most significant).
    Table { policies: Vec<Vec<String>>, returns: Vec<f64>, workloads: Vec<Vec<f64>> },
    /// Open-loop action sequences on a small simulator instance.
    Micro {
        #[serde(default)]
        env: EnvConfig,
        horizon: usize,
        alphabet: Vec<ActionPrimitive>,
        #[serde(default = "default_gamma")]
        gamma: f64,
    },
}

fn default_gamma() -> f64 {
    0.99
}

impl GameCase {
    pub fn build(&self) -> Result<FiniteGame> {
        let tau = FairnessThreshold::new(self.tau).map_err(|e| Error::Config(format!("{}: {e}", self.name)))?;
        match &self.source {
            GameSource::Chore { game } => game.unwrap_or_default().finite_game(tau),
            GameSource::Table { policies, returns, workloads } => {
                if returns.len() != workloads.len() {
                    return Err(Error::Config(format!("{}: returns and workloads differ in length", self.name)));
                }
                let values =
                    returns.iter().zip(workloads).map(|(&ret, w)| ProfileValue { ret, workload: w.clone() }).collect();
                FiniteGame::from_table(self.name.clone(), policies.clone(), tau, Evaluation::LongRunAverage, values)
            }
            GameSource::Micro { env, horizon, alphabet, gamma } => FiniteGame::from_simulator(
                self.name.clone(),
                env.clone(),
                *horizon,
                alphabet,
                tau,
                *gamma,
                DEFAULT_ENUMERATION_CAP,
            ),
        }
    }
}

impl OracleSuite {
    /// Parses a suite; TOML errors carry line and column.
    pub fn from_toml(text: &str) -> Result<Self> {
        let suite: Self = toml::from_str(text).map_err(|e| Error::Config(format!("malformed oracle suite: {e}")))?;
        if suite.games.is_empty() {
            return Err(Error::Config("oracle suite declares no games".into()));
        }
        Ok(suite)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub name: String,
    pub n_profiles: usize,
    pub checks: Vec<Check>,
    pub result: Option<DualAscentResult>,
    pub error: Option<String>,
}

impl CaseReport {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.checks.iter().all(|c| c.passed)
    }

    /// Reported switching multiplier: the oscillation breakpoint, else the final multiplier.
    pub fn switching_lambda(&self) -> Option<f64> {
        let r = self.result.as_ref()?;
        Some(r.oscillation.map_or(r.final_lambda, |o| o.switching_lambda))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub cases: Vec<CaseReport>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(CaseReport::passed)
    }
}

fn check(checks: &mut Vec<Check>, name: &str, passed: bool, detail: String) {
    checks.push(Check { name: name.into(), passed, detail });
}

/// Structural checks every dual-ascent result must pass.
pub fn oracle_checks(game: &FiniteGame, result: &DualAscentResult) -> Vec<Check> {
    let mut checks = Vec::new();
    let grid_top = result.iterates.iter().map(|i| i.lambda).fold(1.0, f64::max) * 2.0;
    let grid: Vec<f64> = (0..=200).map(|i| grid_top * i as f64 / 200.0).collect();
    let convex = grid
        .windows(3)
        .all(|w| game.dual_function(w[1]) <= 0.5 * (game.dual_function(w[0]) + game.dual_function(w[2])) + 1e-9);
    check(&mut checks, "dual function convex", convex, format!("{} grid points", grid.len()));

    let best_feasible = game.rows().iter().filter(|r| r.feasible()).map(|r| r.ret).fold(f64::NEG_INFINITY, f64::max);
    let sandwich = result.iterates.iter().all(|it| game.dual_function(it.lambda) >= best_feasible - 1e-9);
    check(&mut checks, "weak duality", sandwich, format!("{} iterates", result.iterates.len()));

    if game.has_feasible_profile() {
        match &result.certificate {
            Some(cert) => {
                let row = game.row_at(cert.pi_star);
                check(&mut checks, "returned profile feasible", row.feasible(), format!("g = {:.6}", row.g));
                let d = game.dual_function(cert.lambda_star);
                let gap = d - row.penalized(cert.lambda_star);
                check(
                    &mut checks,
                    "penalized optimal at final multiplier",
                    gap <= 1e-9 * (1.0 + d.abs()),
                    format!("gap {gap:.3e} at lambda {:.6}", cert.lambda_star),
                );
                if cert.kkt.satisfied {
                    let ok = verify_smgne(game, cert.pi_star).is_equilibrium();
                    check(&mut checks, "KKT point is an equilibrium", ok, format!("{:?}", cert.verdict));
                }
            }
            None => check(&mut checks, "returned profile feasible", false, "no certificate".into()),
        }
    } else {
        check(&mut checks, "infeasibility reported", result.infeasible(), format!("status {:?}", result.status));
    }
    checks
}

pub fn run_case(case: &GameCase) -> CaseReport {
    let game = match case.build() {
        Ok(g) => g,
        Err(e) => {
            return CaseReport {
                name: case.name.clone(),
                n_profiles: 0,
                checks: vec![],
                result: None,
                error: Some(e.to_string()),
            }
        }
    };
    let cfg =
        DualAscentConfig { eta: case.eta, max_iter: case.max_iter, lambda_max: case.lambda_max, ..Default::default() };
    let result = match exact_dual_ascent(&game, &cfg) {
        Ok(r) => r,
        Err(e) => {
            return CaseReport {
                name: case.name.clone(),
                n_profiles: game.n_profiles(),
                checks: vec![],
                result: None,
                error: Some(e.to_string()),
            }
        }
    };
    let mut checks = oracle_checks(&game, &result);
    match case.expect {
        Some(Expectation::Infeasible) => {
            check(&mut checks, "expected infeasible", result.infeasible(), format!("status {:?}", result.status))
        }
        Some(Expectation::Feasible) => {
            check(&mut checks, "expected feasible", !result.infeasible(), format!("status {:?}", result.status))
        }
        Some(Expectation::Inactive) => {
            let top = exact_primal(&game, 0.0);
            let ok = result.status == AscentStatus::Converged
                && result.final_lambda == 0.0
                && result.certificate.as_ref().is_some_and(|c| c.pi_star == top);
            check(&mut checks, "multiplier stays at zero", ok, format!("final lambda {}", result.final_lambda))
        }
        None => {}
    }
    let mut report = CaseReport {
        name: case.name.clone(),
        n_profiles: game.n_profiles(),
        checks,
        result: Some(result),
        error: None,
    };
    if let Some(target) = case.switching_lambda {
        let got = report.switching_lambda().unwrap_or(f64::NAN);
        let ok = (got - target).abs() <= case.tolerance;
        check(&mut report.checks, "switching multiplier", ok, format!("{got:.6} vs {target} ± {}", case.tolerance));
    }
    report
}

pub fn run_suite(suite: &OracleSuite) -> SuiteReport {
    SuiteReport { cases: suite.games.iter().map(run_case).collect() }
}

/// Loads and runs a suite file.
pub fn run_oracle_suite(path: &Path) -> Result<SuiteReport> {
    Ok(run_suite(&OracleSuite::load(path)?))
}
