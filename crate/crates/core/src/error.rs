use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// Validation failures (bad inputs, violated invariants) are kept apart from
/// IO failures so front ends can map them to distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Invalid(String),

    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("feature `{feature}`: {source}")]
    Feature {
        feature: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn in_feature(self, feature: impl Into<String>) -> Self {
        Error::Feature {
            feature: feature.into(),
            source: Box::new(self),
        }
    }

    /// True for failures caused by the filesystem rather than by the content of the inputs.
    pub fn is_io(&self) -> bool {
        match self {
            Error::MissingFile(_) | Error::Io { .. } => true,
            Error::Feature { source, .. } => source.is_io(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
