use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("tensor does not require grad")]
    NoGradTracking,

    #[error("parameter {index} has no gradient")]
    MissingGrad { index: usize },

    #[error("parse error in {what} at byte {offset}: {msg}")]
    Parse {
        what: String,
        offset: u64,
        msg: String,
    },

    #[error("{what}: missing key {key}")]
    MissingKey { what: String, key: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    File { path: PathBuf, source: io::Error },

    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn file(path: &Path) -> impl FnOnce(io::Error) -> Self + '_ {
        move |source| Error::File { path: path.to_path_buf(), source }
    }

    /// True for malformed inputs (files, configs, arguments) as opposed to
    /// failures that happen while computing.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. } | Error::MissingKey { .. } | Error::Config(_) | Error::Json(_)
        )
    }
}
