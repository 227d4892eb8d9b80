use thiserror::Error;

/// Errors produced by the solver pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("non-finite value {value} at ({x}, {y}): {context}")]
    NonFinite {
        value: f64,
        x: f64,
        y: f64,
        context: String,
    },

    #[error("linear solver failed: {msg} (relative residual {residual:e})")]
    Solver { msg: String, residual: f64 },

    #[error("calibration failed at tau = {tau:e}: {msg}")]
    Calibration { tau: f64, msg: String },

    #[error("table build failed at node {node:?}")]
    TableNode {
        node: Vec<usize>,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}
