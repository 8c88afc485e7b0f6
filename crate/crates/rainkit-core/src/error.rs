use thiserror::Error;

/// Errors surfaced by tensor ops, layers, training and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch on {dim}: expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        dim: &'static str,
        expected: String,
        got: String,
    },

    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },

    #[error("degenerate masked region: {0}")]
    DegenerateRegion(String),

    #[error("backward requires a scalar loss, got shape {0}")]
    NonScalarLoss(String),

    #[error("empty foreground mask: {0}")]
    EmptyMask(String),

    #[error("non-finite value in {term} at step {step}")]
    NonFinite { term: String, step: u64 },

    #[error("unknown norm plan '{name}'; valid plans: {valid}")]
    UnknownPlan { name: String, valid: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("image error: {0}")]
    Image(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Invalid { op, msg: msg.into() }
    }

    /// True for errors caused by bad user input/config rather than runtime failure.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::UnknownPlan { .. } | Error::ShapeMismatch { .. }
        )
    }
}
