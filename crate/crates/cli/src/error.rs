//! CLI error categories and their exit codes.

use std::fmt::Display;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags or configuration; nothing was run.
    #[error("usage: {0}")]
    Usage(String),
    /// Missing or malformed input files, or unwritable outputs.
    #[error("data: {0}")]
    Data(String),
    /// Inference failed after inputs were accepted.
    #[error("solver: {0}")]
    Solver(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Solver(_) => 4,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Tags a library error with the category the caller knows it belongs to.
pub trait Categorize<T> {
    fn usage(self) -> CliResult<T>;
    fn data(self) -> CliResult<T>;
    fn solver(self) -> CliResult<T>;
}

impl<T, E: Display> Categorize<T> for std::result::Result<T, E> {
    fn usage(self) -> CliResult<T> {
        self.map_err(|e| CliError::Usage(e.to_string()))
    }
    fn data(self) -> CliResult<T> {
        self.map_err(|e| CliError::Data(e.to_string()))
    }
    fn solver(self) -> CliResult<T> {
        self.map_err(|e| CliError::Solver(e.to_string()))
    }
}
