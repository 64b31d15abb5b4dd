//! Error type with the exit-code contract: 2 for usage/format problems,
//! 1 for runtime failures.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, config files, or file formats; exit code 2.
    #[error("{0}")]
    Usage(String),
    /// Failures after a run has started (aborted training, I/O mid-run);
    /// exit code 1.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

/// Core errors surfaced while validating inputs are usage errors.
impl From<eoe_core::Error> for CliError {
    fn from(e: eoe_core::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}
