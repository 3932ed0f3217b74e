use std::path::PathBuf;

use thiserror::Error;

use crate::iphc::CodecError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid profile `{profile}`: {reason}")]
    InvalidProfile { profile: String, reason: String },

    #[error("unknown game profile `{0}`")]
    UnknownProfile(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Codec(#[from] CodecError),

    #[error("bundle {bundle}: {source}")]
    Demux {
        bundle: usize,
        #[source]
        source: CodecError,
    },

    #[error("trace integrity: {0}")]
    Integrity(String),

    #[error("trace schema mismatch in {path}: {reason}")]
    Schema { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {source}")]
    Toml {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
}

impl Error {
    pub(crate) fn invalid_profile(profile: &str, reason: impl Into<String>) -> Self {
        Error::InvalidProfile {
            profile: profile.to_string(),
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
