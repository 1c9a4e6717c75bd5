use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure categories shared by every module in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("unsupported op: `{0}` has no backward rule")]
    UnsupportedOp(String),

    #[error("contract error: {0}")]
    Contract(String),

    #[error("spec error at line {line}: {msg}")]
    Spec { line: usize, msg: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("topology mismatch: checkpoint digest {found}, model digest {expected}")]
    Topology { expected: String, found: String },

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}
