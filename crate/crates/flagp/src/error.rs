use std::path::Path;

use thiserror::Error;

/// Failure of a CLI run, grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub(crate) fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<flagp_core::Error> for CliError {
    fn from(e: flagp_core::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else if matches!(e, flagp_core::Error::InvalidArgument(_)) {
            CliError::Config(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
