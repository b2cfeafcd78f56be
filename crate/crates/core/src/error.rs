use std::path::PathBuf;

/// Errors raised across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("numerical error in {context}: {detail}")]
    Numerical { context: String, detail: String },

    #[error("empty batch")]
    EmptyBatch,

    #[error("cannot normalize a vector with norm below 1e-12")]
    ZeroVector,

    #[error("inner gradient was not built with create_graph; second-order hypergradient unavailable")]
    MissingSecondOrderGraph,

    #[error("no corrected label stored for sample id {0}")]
    MissingLabel(u64),

    #[error("ground-truth unimodal sentiments are not available for this dataset")]
    TruthUnavailable,

    #[error("metric undefined: {0}")]
    Undefined(&'static str),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unknown field `{field}` at line {line}")]
    UnknownField { line: usize, field: String },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn numerical(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numerical {
            context: context.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
