//! Fairness-constrained cooperative multi-agent learning.
//!
//! The crate is organised around a shared workload-fairness constraint
//! `g = tau - F(w) <= 0`, where `F` is Jain's index over per-agent workload
//! counters. Agents learn on a Lagrangian-shaped reward while a projected
//! dual ascent adapts the multiplier.
//!
//! * [`sim`]: symbolic rescue-breath simulator with workload accounting.
//! * [`fairness`]: Jain and Gini indices, statewise and discounted violations.
//! * [`dual`]: shaped reward, projected multiplier updates, KKT residuals.
//! * [`learner`]: tabular TD backbones and the primal-dual training loop.
//! * [`oracle`]: exact solver for finite constrained games.
//! * [`stats`]: evaluation summaries and Welch/Bonferroni/Cohen statistics.

pub mod chore;
pub mod dual;
pub mod env;
pub mod error;
pub mod fairness;
pub mod learner;
pub mod oracle;
pub mod sim;
pub mod stats;
pub mod trace;

pub use error::{Error, Result};
