//! Command-line front end: configuration, data preparation and the
//! `smattn` subcommands.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod prepare;

use smattn_core::Error;
use thiserror::Error as ThisError;

#[derive(Debug, ThisError)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("gradient check failed: worst relative error {worst:.3e} exceeds {tolerance:e}")]
    GradcheckFailed { worst: f64, tolerance: f64 },
}

impl CliError {
    /// 1 for usage errors, 2 for data or configuration errors, 3 for
    /// numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::GradcheckFailed { .. } => 3,
            CliError::Core(e) => match e {
                Error::NonFinite(_) | Error::Diverged { .. } | Error::DegenerateRow { .. } => 3,
                _ => 2,
            },
        }
    }
}
