use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A tape or container was addressed with an id it does not hold.
    #[error("structural error: {0}")]
    Structural(String),

    /// An argument fell outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A non-finite value appeared where a finite one was required.
    #[error("numeric error in {what}: {detail}")]
    Numeric { what: String, detail: String },

    #[error("point is behind the camera (z = {z:.6} m)")]
    BehindCamera { z: f64 },

    #[error("ray does not intersect the volume")]
    EmptyRay,

    #[error("no valid pixels to evaluate")]
    EmptyEvaluation,

    #[error("parse error in {file} at byte {offset}: {msg}")]
    Parse { file: String, offset: usize, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn numeric(what: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numeric { what: what.into(), detail: detail.into() }
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn parse(file: impl Into<String>, offset: usize, msg: impl Into<String>) -> Self {
        Error::Parse { file: file.into(), offset, msg: msg.into() }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric { .. } => 3,
            _ => 2,
        }
    }
}
