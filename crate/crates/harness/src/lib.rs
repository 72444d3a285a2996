//! Experiment orchestration for fair-gne: grid configuration, seed fan-out,
//! the comparison-table pipeline and the exact-oracle validation suite.

pub mod config;
pub mod experiment;
pub mod suite;

pub use config::{default_grid, ExperimentConfig, MethodSpec};
pub use experiment::{compute_experiment, run_experiment, RunArtifact};
pub use suite::{run_oracle_suite, OracleSuite, SuiteReport};
