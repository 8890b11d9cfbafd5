use kp_core::SpectralError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Spectral(#[from] SpectralError),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("self-check failed: {0}")]
    CheckFailed(String),
}

impl CliError {
    /// 0 success, 2 validation, 3 numerical, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 4,
            CliError::CheckFailed(_) => 3,
            CliError::Spectral(SpectralError::Io(_)) => 4,
            CliError::Spectral(e) if e.is_numerical() => 3,
            CliError::Spectral(_) => 2,
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.into())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
