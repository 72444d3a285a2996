use std::path::{Path, PathBuf};

use fair_gne::dual::{CadencePreset, PenaltyForm};
use fair_gne::fairness::FairnessThreshold;
use fair_gne::learner::{FairGneConfig, PenaltyMode, TrainConfig};
use fair_gne::sim::EnvConfig;
use fair_gne::{Error, Result};
use serde::{Deserialize, Serialize};

/// One row of the method grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum MethodSpec {
    None,
    FixedGini {
        lambda: f64,
    },
    FairGne {
        tau: f64,
        #[serde(default)]
        eta_lambda: Option<f64>,
        #[serde(default)]
        lambda_max: Option<f64>,
        #[serde(default)]
        lambda0: Option<f64>,
        #[serde(default)]
        form: Option<PenaltyForm>,
    },
}

impl MethodSpec {
    pub fn fair_gne(tau: f64) -> Self {
        MethodSpec::FairGne { tau, eta_lambda: None, lambda_max: None, lambda0: None, form: None }
    }

    pub fn is_baseline(&self) -> bool {
        !matches!(self, MethodSpec::FairGne { .. })
    }

    /// Human-readable row label.
    pub fn label(&self) -> String {
        match self {
            MethodSpec::None => "Unconstrained".into(),
            MethodSpec::FixedGini { lambda } => format!("Gini index (λ={lambda})"),
            MethodSpec::FairGne { tau, .. } => format!("Fair-GNE (τ={tau})"),
        }
    }

    /// File-name-safe identifier.
    pub fn slug(&self) -> String {
        match self {
            MethodSpec::None => "none".into(),
            MethodSpec::FixedGini { lambda } => format!("gini{lambda}"),
            MethodSpec::FairGne { tau, .. } => format!("fairgne{tau}"),
        }
    }

    pub fn penalty(&self, cadence: CadencePreset, default_form: PenaltyForm) -> Result<PenaltyMode> {
        Ok(match *self {
            MethodSpec::None => PenaltyMode::None,
            MethodSpec::FixedGini { lambda } => {
                if !(lambda.is_finite() && lambda >= 0.0) {
                    return Err(Error::Config(format!("gini weight must be nonnegative, got {lambda}")));
                }
                PenaltyMode::FixedGini { lambda }
            }
            MethodSpec::FairGne { tau, eta_lambda, lambda_max, lambda0, form } => {
                let mut c = FairGneConfig::preset(FairnessThreshold::new(tau).map_err(as_config)?, cadence);
                c.eta_lambda = eta_lambda.unwrap_or(c.eta_lambda);
                c.lambda_max = lambda_max.unwrap_or(c.lambda_max);
                c.lambda0 = lambda0.unwrap_or(c.lambda0);
                c.form = form.unwrap_or(default_form);
                PenaltyMode::FairGne(c)
            }
        })
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Domain(m) => Error::Config(m),
        other => other,
    }
}

/// Training settings shared by every grid cell; the penalty comes from the method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub methods: Vec<MethodSpec>,
    pub seeds: Vec<u64>,
    pub cadence: CadencePreset,
    /// Penalty form for Fair-GNE rows that do not set one.
    pub form: PenaltyForm,
    /// Greedy evaluation episodes per trained policy.
    pub eval_episodes: usize,
    pub significance_alpha: f64,
    /// Concurrent grid cells; 0 means one per available core.
    pub workers: usize,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            train: TrainConfig::default(),
            methods: default_grid(),
            seeds: vec![0, 1, 2],
            cadence: CadencePreset::MainText,
            form: PenaltyForm::Signed,
            eval_episodes: 50,
            significance_alpha: 0.05,
            workers: 0,
            out: PathBuf::from("results"),
        }
    }
}

/// Fixed Gini weights 0, 10 and 50 followed by Fair-GNE at four thresholds.
pub fn default_grid() -> Vec<MethodSpec> {
    let mut grid: Vec<MethodSpec> = [0.0, 10.0, 50.0].map(|lambda| MethodSpec::FixedGini { lambda }).to_vec();
    grid.extend([0.85, 0.75, 0.65, 0.55].map(MethodSpec::fair_gne));
    grid
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("method grid is empty".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("no seeds configured".into()));
        }
        if self.eval_episodes == 0 {
            return Err(Error::Config("eval_episodes must be at least 1".into()));
        }
        if !(self.significance_alpha > 0.0 && self.significance_alpha < 1.0) {
            return Err(Error::Config("significance_alpha must lie in (0, 1)".into()));
        }
        self.env.validate()?;
        for m in &self.methods {
            let train = TrainConfig { penalty: m.penalty(self.cadence, self.form)?, ..self.train.clone() };
            train.validate()?;
        }
        Ok(())
    }

    /// Training configuration for one grid cell.
    pub fn cell_config(&self, method: &MethodSpec, seed: u64) -> Result<TrainConfig> {
        Ok(TrainConfig { penalty: method.penalty(self.cadence, self.form)?, seed, ..self.train.clone() })
    }

    pub fn worker_count(&self) -> usize {
        if self.workers > 0 {
            self.workers
        } else {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_has_seven_rows() {
        let grid = default_grid();
        assert_eq!(grid.len(), 7);
        assert_eq!(grid.iter().filter(|m| m.is_baseline()).count(), 3);
        assert_eq!(grid[6].label(), "Fair-GNE (τ=0.55)");
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            seeds = [4, 5]
            cadence = "appendix"
            [env]
            n = 2
            [train]
            episodes = 100
            [[methods]]
            kind = "fair_gne"
            tau = 0.7
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seeds, vec![4, 5]);
        assert_eq!(cfg.env.n_agents, 2);
        assert_eq!(cfg.train.episodes, 100);
        match cfg.cell_config(&cfg.methods[0], 4).unwrap().penalty {
            PenaltyMode::FairGne(c) => assert_eq!(c.eta_lambda, 5e-4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_files_are_config_errors() {
        for text in ["methods = []", "[[methods]]\nkind = \"fair_gne\"\ntau = 1.5", "bogus = 1", "[env]\nn = 1"] {
            assert!(matches!(ExperimentConfig::from_toml(text), Err(Error::Config(_))), "{text}");
        }
        let err = ExperimentConfig::from_toml("seeds = [1,\n").unwrap_err().to_string();
        assert!(err.contains("line"), "{err}");
    }
}
