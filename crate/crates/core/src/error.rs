use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the calibration pipeline and its file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),

    #[error("trajectory error: {0}")]
    Trajectory(String),

    #[error("timestamp {timestamp} outside trajectory span [{start}, {end}]")]
    OutOfSpan { timestamp: f64, start: f64, end: f64 },

    #[error("no road detected: {0}")]
    NoRoad(String),

    #[error("no road plane: {0}")]
    NoPlane(String),

    #[error("no road points: {0}")]
    NoRoadPoints(String),

    #[error("no informative frames")]
    NoInformativeFrames,

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid scene: {0}")]
    Scene(String),

    #[error("dataset error: {0}")]
    Dataset(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }
}
