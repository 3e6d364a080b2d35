use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the fitting pipeline.
///
/// Variants are grouped by category so front-ends can map them onto exit
/// codes: configuration and numeric failures are distinct from bad input data.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("load error in {entry}: {reason}")]
    Load { entry: String, reason: String },

    #[error("unsupported image format in {path}: {reason}")]
    UnsupportedImage { path: PathBuf, reason: String },

    #[error("empty projection: every vertex lies at or behind the near plane")]
    EmptyProjection,

    #[error("optimization diverged in {stage} at iteration {iteration}: loss {loss:.6e} vs initial {initial:.6e}")]
    Diverged {
        stage: String,
        iteration: usize,
        loss: f64,
        initial: f64,
    },

    #[error("non-finite gradient in parameter group `{0}`")]
    NonFiniteGradient(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse failure category, used by the CLI to choose an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Usage,
            Error::Load { .. } | Error::UnsupportedImage { .. } | Error::Io { .. } => {
                ErrorKind::Data
            }
            Error::Numeric(_)
            | Error::EmptyProjection
            | Error::Diverged { .. }
            | Error::NonFiniteGradient(_) => ErrorKind::Numeric,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn load(entry: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Load {
            entry: entry.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
