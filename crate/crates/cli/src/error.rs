use std::path::PathBuf;

use thiserror::Error;

/// Failures of a command, grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or arguments (exit 2).
    #[error("configuration error: {0}")]
    Config(String),

    /// Unreadable or inconsistent input data (exit 3).
    #[error("data error: {0}")]
    Data(String),

    /// A condition that should never happen (exit 4).
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Data(_) => 3,
            Self::Internal(_) => 4,
        }
    }

    pub fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        Self::Data(format!("{}: {e}", path.display()))
    }

    pub fn output(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        Self::Internal(format!("writing {}: {e}", path.display()))
    }

    pub fn missing(what: &str, path: PathBuf) -> Self {
        Self::Config(format!("{what} {} does not exist", path.display()))
    }
}

impl From<d2co::Error> for CliError {
    fn from(e: d2co::Error) -> Self {
        use d2co::Error as E;
        match e {
            E::InvalidArgument(_) | E::PlacementFailed(_) => Self::Config(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
