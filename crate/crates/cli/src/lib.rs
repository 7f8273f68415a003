//! Experiment orchestration for the quadbench benchmark: configuration, the
//! result store, report rendering and the command implementations.

pub mod commands;
pub mod config;
pub mod report;
pub mod store;

use quadbench::agent::AgentError;
use quadbench::eval::EvalError;

pub use config::Config;

/// Environment variable naming the output root.
pub const OUT_ENV: &str = "QUADBENCH_OUT";

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Missing(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("{0}")]
    Failed(String),
}

impl HarnessError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) => 2,
            HarnessError::Missing(_) => 3,
            HarnessError::Diverged(_) => 4,
            HarnessError::Failed(_) => 1,
        }
    }
}

impl From<AgentError> for HarnessError {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::DivergedTraining { .. } => HarnessError::Diverged(e.to_string()),
            AgentError::Io(_) | AgentError::Checkpoint(_) => HarnessError::Missing(e.to_string()),
            other => HarnessError::Failed(other.to_string()),
        }
    }
}

impl From<EvalError> for HarnessError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Io(_) | EvalError::Csv(_) | EvalError::InvalidLog(_) => HarnessError::Missing(e.to_string()),
            other => HarnessError::Failed(other.to_string()),
        }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Failed(format!("i/o error: {e}"))
    }
}
