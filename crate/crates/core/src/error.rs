use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("tape already consumed by a previous backward pass")]
    DeadTape,
    #[error("unknown variable #{0} for this tape")]
    UnknownVar(usize),
    #[error("parse error in {path} at byte {offset}: {msg}")]
    Parse {
        path: String,
        offset: usize,
        msg: String,
    },
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("model file {path}: {msg}")]
    ModelFile { path: String, msg: String },
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("config: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("frozen base checksum drift: {before} -> {after}")]
    ChecksumDrift { before: String, after: String },
    #[error("gradient check failed: {0}")]
    GradCheckFailed(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line driver: 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidSpec(_) => 1,
            Error::NonFiniteLoss { .. }
            | Error::ChecksumDrift { .. }
            | Error::GradCheckFailed(_) => 3,
            Error::Shape { .. }
            | Error::InvalidArgument { .. }
            | Error::NonScalarLoss(_)
            | Error::DeadTape
            | Error::UnknownVar(_)
            | Error::Parse { .. }
            | Error::ModelFile { .. }
            | Error::Dataset(_)
            | Error::Io { .. } => 2,
        }
    }
}
