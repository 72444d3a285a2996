//! The adaptive fairness multiplier: reward shaping, projected dual ascent and
//! complementary-slackness bookkeeping.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fairness::FairnessThreshold;

/// Relative tolerance used for KKT satisfaction unless configured otherwise.
pub const DEFAULT_KKT_EPSILON: f64 = 0.05;

/// How the fairness term enters the shaped reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyForm {
    /// `r - lambda (tau - F)`: slack earns a bonus.
    #[default]
    Signed,
    /// `r - lambda max(0, tau - F)`: only violations are charged.
    Clamped,
}

/// `r - lambda * (tau - F)`, or its clamped variant.
pub fn shaped_reward_with(r: f64, lambda: f64, tau: f64, fairness_value: f64, form: PenaltyForm) -> f64 {
    let g = tau - fairness_value;
    match form {
        PenaltyForm::Signed => r - lambda * g,
        PenaltyForm::Clamped => r - lambda * g.max(0.0),
    }
}

/// Signed Lagrangian reward `r - lambda (tau - F)` at the current multiplier.
pub fn shaped_reward(r: f64, dual: &DualState, fairness_value: f64) -> f64 {
    shaped_reward_with(r, dual.lambda, dual.tau.value(), fairness_value, PenaltyForm::Signed)
}

/// One entry of the multiplier trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualRecord {
    pub iteration: u64,
    /// Multiplier after the update.
    pub lambda: f64,
    pub g_estimate: f64,
    pub residual: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub lambda: f64,
    pub lambda_max: f64,
    pub eta_lambda: f64,
    pub tau: FairnessThreshold,
    /// Environment steps or episodes between updates, depending on the schedule.
    pub update_period: usize,
    pub kkt_epsilon: f64,
    pub iteration: u64,
    pub history: Vec<DualRecord>,
    /// When false, updates are not appended to `history`.
    pub record_history: bool,
}

impl DualState {
    pub fn new(tau: FairnessThreshold, eta_lambda: f64, lambda_max: f64) -> Result<Self> {
        if !(eta_lambda.is_finite() && eta_lambda >= 0.0) {
            return Err(Error::Config(format!("eta_lambda must be finite and nonnegative, got {eta_lambda}")));
        }
        if !(lambda_max.is_finite() && lambda_max > 0.0) {
            return Err(Error::Config(format!("lambda_max must be positive, got {lambda_max}")));
        }
        Ok(Self {
            lambda: 0.0,
            lambda_max,
            eta_lambda,
            tau,
            update_period: 1,
            kkt_epsilon: DEFAULT_KKT_EPSILON,
            iteration: 0,
            history: Vec::new(),
            record_history: true,
        })
    }

    /// Sets the initial multiplier, projected onto `[0, lambda_max]`.
    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda.clamp(0.0, self.lambda_max);
        self
    }

    pub fn with_update_period(mut self, period: usize) -> Self {
        self.update_period = period.max(1);
        self
    }

    /// Projected ascent `lambda <- clip(lambda + eta g, 0, lambda_max)` in place.
    pub fn update(&mut self, g_estimate: f64) -> Result<f64> {
        if !g_estimate.is_finite() {
            return Err(Error::Numerical(format!("non-finite constraint estimate {g_estimate}")));
        }
        self.lambda = (self.lambda + self.eta_lambda * g_estimate).clamp(0.0, self.lambda_max);
        self.iteration += 1;
        if self.record_history {
            let kkt = kkt_check(self.lambda, g_estimate, self.kkt_epsilon);
            self.history.push(DualRecord {
                iteration: self.iteration,
                lambda: self.lambda,
                g_estimate,
                residual: kkt.residual,
                satisfied: kkt.satisfied,
            });
        }
        Ok(self.lambda)
    }

    /// Whether an update with `g` would leave the multiplier unchanged.
    pub fn is_stationary(&self, g: f64) -> bool {
        (self.lambda + self.eta_lambda * g).clamp(0.0, self.lambda_max) == self.lambda
    }

    pub fn write_history_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "iteration,lambda,g_estimate,residual,satisfied")?;
        for r in &self.history {
            writeln!(out, "{},{},{},{},{}", r.iteration, r.lambda, r.g_estimate, r.residual, r.satisfied)?;
        }
        Ok(())
    }
}

/// Functional form of a single projected ascent step.
pub fn dual_update(dual: &DualState, g_estimate: f64) -> Result<DualState> {
    let mut next = dual.clone();
    next.update(g_estimate)?;
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktRecord {
    pub lambda: f64,
    pub g: f64,
    /// Complementary-slackness residual `|lambda g|`.
    pub residual: f64,
    pub feasible: bool,
    pub epsilon: f64,
    /// `feasible && residual <= epsilon (1 + lambda)`.
    pub satisfied: bool,
}

pub fn kkt_check(lambda: f64, g: f64, epsilon: f64) -> KktRecord {
    let residual = (lambda * g).abs();
    let feasible = g <= 0.0;
    KktRecord { lambda, g, residual, feasible, epsilon, satisfied: feasible && residual <= epsilon * (1.0 + lambda) }
}

/// Dual-update cadences.
///
/// `MainText` updates after every environment step from the statewise
/// violation with `eta = 0.01`. `Appendix` updates every 5000 environment
/// steps from a Monte Carlo rollout estimate with `eta = 5e-4`. Both cap the
/// multiplier at 20.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CadencePreset {
    #[default]
    MainText,
    Appendix,
}

impl CadencePreset {
    pub fn eta_lambda(self) -> f64 {
        match self {
            CadencePreset::MainText => 0.01,
            CadencePreset::Appendix => 5e-4,
        }
    }

    pub fn lambda_max(self) -> f64 {
        20.0
    }

    pub fn schedule(self) -> DualSchedule {
        match self {
            CadencePreset::MainText => {
                DualSchedule { unit: UpdateUnit::EnvSteps, period: 1, estimate: GEstimate::Statewise }
            }
            CadencePreset::Appendix => DualSchedule {
                unit: UpdateUnit::EnvSteps,
                period: 5000,
                estimate: GEstimate::GreedyRollouts { rollouts: 1 },
            },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CadencePreset::MainText => "main-text",
            CadencePreset::Appendix => "appendix",
        }
    }
}

impl std::str::FromStr for CadencePreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "main-text" => Ok(CadencePreset::MainText),
            "appendix" => Ok(CadencePreset::Appendix),
            other => Err(Error::Config(format!("unknown cadence preset {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateUnit {
    EnvSteps,
    Episodes,
}

/// Source of the constraint estimate fed to each dual update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GEstimate {
    /// Mean statewise violation over the training steps since the last update.
    Statewise,
    /// Discounted violation of the training episodes since the last update.
    TrainingEpisodes,
    /// Mean discounted violation of `rollouts` greedy rollouts of the current policy.
    GreedyRollouts { rollouts: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DualSchedule {
    pub unit: UpdateUnit,
    pub period: usize,
    pub estimate: GEstimate,
}
