use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    #[error("privacy target infeasible: {0}")]
    Infeasible(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(context: &'static str, expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            context,
            expected: expected.into(),
            got: got.into(),
        }
    }

    /// Process exit code for the CLI: 2 for config errors, 3 for infeasible
    /// privacy targets, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidParameter(_) => 2,
            Error::Infeasible(_) => 3,
            _ => 1,
        }
    }
}
