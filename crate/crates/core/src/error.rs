use thiserror::Error;

/// Errors raised across the simulator, learners, oracle and statistics code.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("interface error: {0}")]
    Interface(String),

    #[error("lifecycle error: {0}")]
    Lifecycle(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("capacity error: {0}")]
    Capacity(String),
}

pub type Result<T> = std::result::Result<T, Error>;
