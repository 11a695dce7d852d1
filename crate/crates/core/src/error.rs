use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("config: {0}")]
    Config(String),
    #[error("workload: {0}")]
    Workload(String),
    #[error("trace: {0}")]
    Trace(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("fatal: {0}")]
    Fatal(String),
}

pub type Result<T> = std::result::Result<T, SimError>;
