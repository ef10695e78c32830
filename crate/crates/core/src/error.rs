use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("label {label} out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    /// Non-finite loss or gradients during training. The message carries
    /// the epoch and step where divergence was detected.
    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    /// Malformed file contents; `offset` is the byte position of the
    /// first inconsistency.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
