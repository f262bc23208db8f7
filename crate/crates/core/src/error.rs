use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// An action referenced a node or edge that does not exist, or violated
    /// the action-space preconditions. Unreachable through a correct action
    /// mask.
    #[error("invalid action: {0}")]
    InvalidAction(String),

    /// An API contract was violated by the caller (e.g. stepping a terminal
    /// episode, sampling from an empty mask).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Non-finite values appeared in the network at the named stage.
    #[error("non-finite values in network stage `{stage}`")]
    Numeric { stage: &'static str },

    /// The requested agent mode is not defined for the task.
    #[error("unsupported mode: {0}")]
    UnsupportedMode(String),

    /// Scene generation failed to find a feasible layout.
    #[error("scene generation failed: {0}")]
    SceneGeneration(String),

    /// Malformed configuration file or unknown key.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed or incompatible checkpoint file.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("missing checkpoint for mode `{0}`")]
    MissingCheckpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
