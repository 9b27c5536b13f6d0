use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is out of range or inconsistent.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Vector or matrix dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A caller violated an operation's contract.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A data file could not be parsed. Line numbers are 1-based and include
    /// the header line.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A class does not have enough instances for the requested sampling.
    #[error("class {class} has {available} instances, need {needed}")]
    InsufficientData {
        class: usize,
        available: usize,
        needed: usize,
    },

    /// Training produced a non-finite loss or gradient.
    #[error("training diverged at iteration {iteration}: {msg}")]
    Divergence { iteration: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
