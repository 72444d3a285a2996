//! Fairness indices and constraint-violation functionals.
//!
//! Conventions at zero workload: Jain's index is 1.0 and the Gini index is 0.0,
//! so an episode that has not started any work carries no inequity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::EpisodeTrace;

/// Threshold `tau` of the constraint `F(w) >= tau`, strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct FairnessThreshold(f64);

impl FairnessThreshold {
    pub fn new(tau: f64) -> Result<Self> {
        if tau.is_finite() && tau > 0.0 && tau < 1.0 {
            Ok(Self(tau))
        } else {
            Err(Error::Domain(format!("fairness threshold must lie in (0, 1), got {tau}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for FairnessThreshold {
    type Error = Error;

    fn try_from(tau: f64) -> Result<Self> {
        Self::new(tau)
    }
}

impl From<FairnessThreshold> for f64 {
    fn from(t: FairnessThreshold) -> f64 {
        t.0
    }
}

fn checked_entries<T: Copy + Into<f64>>(w: &[T]) -> Result<Vec<f64>> {
    if w.is_empty() {
        return Err(Error::Domain("workload vector is empty".into()));
    }
    w.iter()
        .map(|&x| {
            let x: f64 = x.into();
            if x.is_finite() && x >= 0.0 {
                Ok(x)
            } else {
                Err(Error::Domain(format!("workload entries must be finite and nonnegative, got {x}")))
            }
        })
        .collect()
}

/// Jain's fairness index `(sum w)^2 / (n * sum w^2)`.
///
/// Lies in `[1/n, 1]` for nonzero workloads and is 1.0 for the all-zero vector.
pub fn jain_index<T: Copy + Into<f64>>(w: &[T]) -> Result<f64> {
    let w = checked_entries(w)?;
    let sum: f64 = w.iter().sum();
    if sum == 0.0 {
        return Ok(1.0);
    }
    let sum_sq: f64 = w.iter().map(|x| x * x).sum();
    let f = sum * sum / (w.len() as f64 * sum_sq);
    // rounding can push equal entries a hair above 1
    Ok(f.min(1.0))
}

/// Mean-absolute-difference Gini index `sum_ij |w_i - w_j| / (2 n sum w)`.
pub fn gini_index<T: Copy + Into<f64>>(w: &[T]) -> Result<f64> {
    let w = checked_entries(w)?;
    let sum: f64 = w.iter().sum();
    if sum == 0.0 {
        return Ok(0.0);
    }
    let pairwise: f64 = w.iter().map(|a| w.iter().map(|b| (a - b).abs()).sum::<f64>()).sum();
    Ok(pairwise / (2.0 * w.len() as f64 * sum))
}

/// Statewise violation `g = tau - F(w)`; nonpositive iff the constraint holds.
pub fn statewise_violation<T: Copy + Into<f64>>(w: &[T], tau: FairnessThreshold) -> Result<f64> {
    Ok(tau.value() - jain_index(w)?)
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("discount must lie in (0, 1), got {gamma}")))
    }
}

/// `sum_t gamma^t * g_t` over a sequence of per-step violations.
pub fn discounted_sum(per_step_g: &[f64], gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    if per_step_g.is_empty() {
        return Err(Error::Domain("cannot discount an empty violation sequence".into()));
    }
    let mut discount = 1.0;
    let mut total = 0.0;
    for g in per_step_g {
        total += discount * g;
        discount *= gamma;
    }
    Ok(total)
}

/// Discounted trajectory violation `sum_t gamma^t (tau - F(w_t))` of one episode.
///
/// Averaging this over `M` rollouts is the Monte Carlo estimate of the
/// trajectory-level constraint.
pub fn discounted_violation(trace: &EpisodeTrace, tau: FairnessThreshold, gamma: f64) -> Result<f64> {
    if trace.steps.is_empty() {
        return Err(Error::Domain("episode trace is empty".into()));
    }
    let g: Vec<f64> = trace.steps.iter().map(|s| tau.value() - s.jfi).collect();
    discounted_sum(&g, gamma)
}

/// Per-step violations of an episode together with their discounted total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationRecord {
    pub per_step_g: Vec<f64>,
    pub gamma: f64,
    pub discounted_total: f64,
}

impl ViolationRecord {
    pub fn from_fairness(fairness: &[f64], tau: FairnessThreshold, gamma: f64) -> Result<Self> {
        let per_step_g: Vec<f64> = fairness.iter().map(|f| tau.value() - f).collect();
        let discounted_total = discounted_sum(&per_step_g, gamma)?;
        Ok(Self { per_step_g, gamma, discounted_total })
    }
}
