use thiserror::Error;

/// Errors raised across the optimization laboratory.
#[derive(Debug, Error)]
pub enum PapoError {
    /// Invalid or inconsistent configuration (unknown goal, bad bounds, unknown keys).
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller broke an operation's precondition (shape mismatch, out-of-range action, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A loss, ratio or gradient became NaN or infinite.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl From<serde_json::Error> for PapoError {
    fn from(e: serde_json::Error) -> Self {
        PapoError::Serde(e.to_string())
    }
}

impl PapoError {
    /// Prefixes the message while keeping the error kind.
    pub fn context(self, prefix: &str) -> Self {
        match self {
            PapoError::Config(m) => PapoError::Config(format!("{prefix}: {m}")),
            PapoError::Contract(m) => PapoError::Contract(format!("{prefix}: {m}")),
            PapoError::NonFinite(m) => PapoError::NonFinite(format!("{prefix}: {m}")),
            PapoError::Io(e) => PapoError::Io(std::io::Error::new(e.kind(), format!("{prefix}: {e}"))),
            PapoError::Serde(m) => PapoError::Serde(format!("{prefix}: {m}")),
        }
    }
}

pub type Result<T> = std::result::Result<T, PapoError>;
