use thiserror::Error;

/// Errors raised by the SKIM toolkit.
#[derive(Debug, Error)]
pub enum SkimError {
    /// A parameter violates a documented precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// A numeric argument lies outside the function's domain (NaN, infinity, non-positive).
    #[error("domain error: {0}")]
    Domain(String),

    /// Operand shapes do not agree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// The object is not in a state that supports the request.
    #[error("state error: {0}")]
    State(String),

    /// A stateful kernel was passed to a stateless evaluation routine.
    #[error("kernel misuse: {0}")]
    Misuse(String),

    /// A reduction over an all-zero input.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Malformed text input.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SkimError>;

pub(crate) fn validation(msg: impl Into<String>) -> SkimError {
    SkimError::Validation(msg.into())
}

pub(crate) fn dimension(msg: impl Into<String>) -> SkimError {
    SkimError::Dimension(msg.into())
}

pub(crate) fn domain(msg: impl Into<String>) -> SkimError {
    SkimError::Domain(msg.into())
}
