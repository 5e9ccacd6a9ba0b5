//! CLI error type with process exit codes.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Error, Debug)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("verification failed: {0}")]
    VerificationFailed(String),
}

impl CliError {
    /// 2 config, 3 numeric, 4 verification failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::VerificationFailed(_) => 4,
        }
    }
}

impl From<gridalign_core::Error> for CliError {
    fn from(e: gridalign_core::Error) -> Self {
        use gridalign_core::Error as E;
        match e {
            E::Numeric(_) | E::AxisUnderpopulated { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
