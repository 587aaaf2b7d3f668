use thiserror::Error;

/// Errors produced across the crate.
///
/// The split between `InvalidInput`/`InvalidConfig` and the rest matters to
/// the CLI: the former map to exit code 2 (caller mistake), everything else
/// to exit code 1 (runtime failure).
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not conform to the operation's contract.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// An argument violates a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A configuration value is out of range or inconsistent.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Checkpoint file is corrupt or from an incompatible version.
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    /// Dataset manifest is missing, malformed, or violates split policy.
    #[error("manifest: {0}")]
    Manifest(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad user input rather than runtime failure.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::ShapeMismatch(_)
                | Error::InvalidInput(_)
                | Error::InvalidConfig(_)
                | Error::Checkpoint(_)
                | Error::Manifest(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
