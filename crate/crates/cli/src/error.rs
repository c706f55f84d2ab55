use std::path::Path;

use thiserror::Error;

/// Failures of a CLI command, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    pub(crate) fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Data(format!("{}: {err}", path.display()))
    }
}

impl From<crm_core::Error> for CliError {
    fn from(err: crm_core::Error) -> Self {
        use crm_core::Error as E;
        match err {
            E::InvalidField { .. } => CliError::Config(err.to_string()),
            E::Diverged { .. } | E::NonFinite(_) | E::NonFiniteProbe { .. } => CliError::Numeric(err.to_string()),
            _ => CliError::Data(err.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
