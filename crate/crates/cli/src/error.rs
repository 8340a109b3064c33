use ncd_core::NcdError;
use thiserror::Error;

/// Failures mapped onto the process exit-code contract.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("incompatible inputs: {0}")]
    Incompatible(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Incompatible(_) => 4,
        }
    }
}

impl From<NcdError> for CliError {
    fn from(e: NcdError) -> Self {
        match e {
            NcdError::Config(m) | NcdError::Parameter(m) | NcdError::Generation(m) => CliError::Config(m),
            NcdError::Io(m) | NcdError::Format(m) => CliError::Io(m),
            NcdError::Shape(m) | NcdError::Usage(m) | NcdError::Input(m) => CliError::Incompatible(m),
        }
    }
}
