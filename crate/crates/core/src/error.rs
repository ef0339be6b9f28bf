use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("degenerate support: retained mass {retained_mass:e} is below the floor")]
    DegenerateSupport { retained_mass: f64 },

    #[error("no valid positions to select from")]
    EmptySelection,

    #[error("mask keeps no positions")]
    EmptyMask,

    #[error("misaligned {what}: expected {expected}, found {found}")]
    Misaligned {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("frozen bank: {0}")]
    FrozenBank(String),

    #[error("design matrix is rank deficient; collinear columns: {columns:?}")]
    RankDeficient { columns: Vec<String> },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("line {line}: {message}")]
    Validation { line: usize, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
