use thiserror::Error;

/// Error type shared across the toolkit.
#[derive(Error, Debug)]
pub enum SaaError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("contract violation in {op}: {detail}")]
    Contract { op: &'static str, detail: String },

    #[error("numerical failure in {op}: {detail}")]
    Numerical { op: &'static str, detail: String },

    #[error("infeasible alignment: target length {target_len} exceeds {frames} encoded frames")]
    InfeasibleAlignment { target_len: usize, frames: usize },

    #[error("oracle instance too large: {0}")]
    OracleSize(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("undefined CER: empty reference with non-empty hypothesis")]
    UndefinedCer,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SaaError>;

impl SaaError {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        SaaError::Shape { op, detail: detail.into() }
    }
    pub fn contract(op: &'static str, detail: impl Into<String>) -> Self {
        SaaError::Contract { op, detail: detail.into() }
    }
    pub fn numerical(op: &'static str, detail: impl Into<String>) -> Self {
        SaaError::Numerical { op, detail: detail.into() }
    }
}
