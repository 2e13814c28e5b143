use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("alphabet is empty")]
    EmptyAlphabet,
    #[error("duplicate character {0:?} in alphabet")]
    DuplicateCharacter(char),
    #[error("character {0:?} is not in the alphabet")]
    UnknownCharacter(char),
    #[error("input string is empty")]
    EmptyString,
    #[error("no samples to batch")]
    EmptyBatch,
    #[error("token id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: u32, size: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error("malformed data: {0}")]
    Format(String),
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    Divergence { epoch: usize, step: usize },
    #[error("loss is not finite")]
    NonFiniteLoss,
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("reference {0} is empty")]
    EmptyReference(usize),
    #[error("nothing to report")]
    EmptyReport,
    #[error("{failed} gradient check(s) above tolerance {tolerance:e}")]
    GradientCheck { failed: usize, tolerance: f64 },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Whether the error stems from bad user input rather than a failure
    /// while doing the work.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::EmptyAlphabet
                | Error::DuplicateCharacter(_)
                | Error::UnknownCharacter(_)
                | Error::EmptyString
                | Error::InvalidConfig(_)
                | Error::InvalidArgument(_)
                | Error::IdOutOfRange { .. }
                | Error::EmptyCorpus
                | Error::EmptyReference(_)
        )
    }
}
