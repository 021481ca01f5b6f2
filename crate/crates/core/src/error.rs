use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical error at node {node}: {msg}")]
    Numerical { node: String, msg: String },

    #[error("sampling error: interval ({lower}, {upper}) has zero mass")]
    ZeroMass { lower: f64, upper: f64 },

    #[error("validation error for cohort {cohort}: {msg}")]
    Validation { cohort: String, msg: String },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("median undefined: survival estimate never reaches 0.5")]
    MedianUndefined,

    #[error("rank deficient design: missing cells {0:?}")]
    RankDeficient(Vec<String>),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
