//! Scenario ingestion and the `solve`, `sweep`, `plan` and `simulate` commands.

pub mod commands;
pub mod error;
pub mod format;
pub mod scenario;

pub use error::CliError;
pub use scenario::{GridSpec, Scenario};
