use thiserror::Error;

/// Errors produced by tensor operations, model plumbing, and file IO.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not satisfy an operation's contract.
    #[error("{op}: {msg}")]
    Shape { op: &'static str, msg: String },

    /// An input value lies outside an operation's domain.
    #[error("{op}: value {value} at flat index {index} is outside the domain ({msg})")]
    Domain {
        op: &'static str,
        index: usize,
        value: f64,
        msg: String,
    },

    /// A hyperparameter violates its stated range.
    #[error("invalid parameter {name}: {msg}")]
    Param { name: &'static str, msg: String },

    /// An API contract was broken by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A file could not be parsed.
    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: u64, msg: String },

    /// Evaluation could not produce a result (e.g. empty valid mask).
    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Shape {
            op,
            msg: msg.into(),
        }
    }

    pub(crate) fn parse(offset: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            offset: offset as u64,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
