use thiserror::Error;

/// Errors surfaced by every fallible operation in the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum NcdError {
    /// Operand shapes or list lengths are incompatible.
    #[error("shape error: {0}")]
    Shape(String),
    /// A numeric parameter is outside its valid range.
    #[error("invalid parameter: {0}")]
    Parameter(String),
    /// A model, training or data configuration is inconsistent.
    #[error("configuration error: {0}")]
    Config(String),
    /// The operation was called in a way its contract forbids.
    #[error("usage error: {0}")]
    Usage(String),
    /// Input values are unusable (for example non-finite logits).
    #[error("input error: {0}")]
    Input(String),
    /// Synthetic data generation could not satisfy the requested spec.
    #[error("generation error: {0}")]
    Generation(String),
    /// A file could not be parsed.
    #[error("format error: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for NcdError {
    fn from(err: std::io::Error) -> Self {
        NcdError::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, NcdError>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(NcdError::Shape(msg.into()))
}
