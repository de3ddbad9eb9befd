use std::path::PathBuf;

use thiserror::Error;

use crate::objectives::LossBreakdown;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] uar_core::Error),

    #[error("tensor backend: {0}")]
    Tensor(#[from] candle_core::Error),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint fingerprint {found} does not match configuration fingerprint {expected}")]
    Fingerprint { expected: String, found: String },

    #[error("training diverged at step {step}: {breakdown:?}")]
    Diverged { step: usize, breakdown: LossBreakdown },

    #[error("cannot read {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable tag used in CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Core(uar_core::Error::Dimension(_)) | Error::Dimension(_) => "dimension",
            Error::Core(uar_core::Error::Domain(_)) => "domain",
            Error::Core(uar_core::Error::Format { .. }) => "format",
            Error::Core(_) => "data",
            Error::Tensor(_) => "tensor",
            Error::Config(_) => "config",
            Error::Fingerprint { .. } => "fingerprint_mismatch",
            Error::Diverged { .. } => "diverged",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
        }
    }
}
