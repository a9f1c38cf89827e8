use std::process::ExitCode;

use pancap::{OracleError, ParamError, PlanError, SolveError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Schema(String),
    #[error("solver: {0}")]
    Solver(String),
    #[error("planner: {0}")]
    Depth(String),
    #[error("simulation: {0}")]
    Simulation(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// Stable process exit status for each failure class.
    pub fn code(&self) -> u8 {
        match self {
            CliError::Schema(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Depth(_) => 4,
            CliError::Simulation(_) => 5,
            CliError::Io(_) => 1,
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code())
    }
}

impl From<ParamError> for CliError {
    fn from(e: ParamError) -> Self {
        CliError::Schema(e.to_string())
    }
}

impl From<SolveError> for CliError {
    fn from(e: SolveError) -> Self {
        match e {
            SolveError::InvalidGrid(msg) => CliError::Schema(format!("sweep grid: {msg}")),
            other => CliError::Solver(other.to_string()),
        }
    }
}

impl From<PlanError> for CliError {
    fn from(e: PlanError) -> Self {
        match e {
            PlanError::DepthExceeded { .. } => CliError::Depth(e.to_string()),
            PlanError::EmptyHorizon => CliError::Schema(e.to_string()),
            PlanError::Solve(inner) => inner.into(),
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::InvalidStep { .. } => CliError::Schema(e.to_string()),
            other => CliError::Simulation(other.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(std::io::Error::other(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(std::io::Error::other(e))
    }
}
