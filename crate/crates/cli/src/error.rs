use dsm_core::DsmError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Dsm(#[from] DsmError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
}

impl CliError {
    /// Usage, parse and I/O problems share code 64; library errors other
    /// than usage errors are solver failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Dsm(DsmError::Usage(_) | DsmError::DimensionMismatch { .. }) => 64,
            CliError::Dsm(_) => 3,
            _ => 64,
        }
    }
}
