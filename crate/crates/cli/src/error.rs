use std::path::PathBuf;

use oarseg_core::engine::EngineError;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_INTERNAL: i32 = 70;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("missing curves: {0}")]
    MissingCurves(String),
    #[error("{0}")]
    Internal(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) | CliError::MissingCurves(_) => EXIT_DATA,
            CliError::Internal(_) => EXIT_INTERNAL,
            CliError::Engine(e) => match e {
                EngineError::InvalidConfig(_) | EngineError::ConfigMismatch(_) => EXIT_USAGE,
                EngineError::Io { .. } => EXIT_DATA,
                e if e.is_data_error() => EXIT_DATA,
                _ => EXIT_INTERNAL,
            },
        }
    }

    pub fn io(path: impl Into<PathBuf>, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.into().display()))
    }
}
