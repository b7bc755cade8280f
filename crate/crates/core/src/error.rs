use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TsmError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("non-finite value produced at step {step}: {detail}")]
    NonFinite { step: usize, detail: String },

    #[error("zero variance input to correlation")]
    ZeroVariance,

    #[error("misaligned trajectories: {0}")]
    Misaligned(String),

    #[error("format error in {path:?}: {msg}")]
    Format { path: Option<PathBuf>, msg: String },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("checksum mismatch in frame {frame}")]
    Checksum { frame: usize },

    #[error("io error on {path:?}: {source}")]
    Io {
        path: Option<PathBuf>,
        #[source]
        source: std::io::Error,
    },
}

impl TsmError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TsmError::Io {
            path: Some(path.into()),
            source,
        }
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        TsmError::Format {
            path: None,
            msg: msg.into(),
        }
    }

    /// Short machine-parsable code used by the command line front end.
    pub fn code(&self) -> &'static str {
        match self {
            TsmError::InvalidGrid(_) => "E_GRID",
            TsmError::InvalidArgument(_) => "E_ARG",
            TsmError::ShapeMismatch { .. } => "E_SHAPE",
            TsmError::NonFinite { .. } => "E_NONFINITE",
            TsmError::ZeroVariance => "E_ZERO_VARIANCE",
            TsmError::Misaligned(_) => "E_MISALIGNED",
            TsmError::Format { .. } => "E_FORMAT",
            TsmError::Version { .. } => "E_VERSION",
            TsmError::Checksum { .. } => "E_CHECKSUM",
            TsmError::Io { .. } => "E_IO",
        }
    }
}

pub type Result<T> = std::result::Result<T, TsmError>;
