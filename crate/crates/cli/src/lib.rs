//! Command-line surface and HTTP service for the rigging pipeline.

pub mod commands;
pub mod pose;
pub mod server;

use rigforge_core::rig::PipelineError;

/// Process exit status for a failed command.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad input from the caller (exit code 2).
    #[error("{0}")]
    Validation(String),
    /// Anything else (exit code 1).
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Internal(_) => 1,
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Internal(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Internal(e.to_string())
    }
}

/// Reads a file, reporting a missing or unreadable path as a validation error.
pub fn read_input(path: &std::path::Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}
