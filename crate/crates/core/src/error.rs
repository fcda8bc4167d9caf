use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },

    #[error("track {track}: feature vector has length {found}, expected {expected}")]
    FeatureLength {
        track: String,
        expected: usize,
        found: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("candidate set is empty")]
    EmptyCandidates,

    #[error("activation vectors are not aligned to the same candidate list")]
    Misaligned,

    #[error("non-finite activation score")]
    NonFinite,

    #[error("corpus is not sessionized")]
    NotSessionized,

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("power-law fit needs at least 2 non-empty bins, got {0}")]
    TooFewBins(usize),

    #[error("window events must be time-ordered and not after the reference time")]
    BadWindow,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from input data rather than I/O or configuration.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::MalformedRow { .. }
                | Error::FeatureLength { .. }
                | Error::NotSessionized
                | Error::EmptyCorpus
                | Error::TooFewBins(_)
                | Error::NonFinite
                | Error::BadWindow
        )
    }
}
