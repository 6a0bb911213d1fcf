use thiserror::Error;

/// Errors raised by fitting, imputation and file handling.
#[derive(Debug, Error)]
pub enum Error {
    #[error("column {column} is degenerate: {reason}")]
    DegenerateColumn { column: usize, reason: String },

    #[error("value {value} lies below the observed support; latent value is not finite")]
    NonFiniteLatent { value: f64 },

    #[error("level {level} was not observed when the ordinal marginal was fitted")]
    UnknownLevel { level: f64 },

    #[error("empty truncation interval ({lower}, {upper}]")]
    EmptyInterval { lower: f64, upper: f64 },

    #[error("k x k system is numerically singular")]
    SingularSystem,

    #[error("rank {rank} is invalid for {ncols} columns (need 1 <= rank < columns)")]
    BadRank { rank: usize, ncols: usize },

    #[error("loading row {row} is zero and cannot be rescaled")]
    ZeroRow { row: usize },

    #[error("column {column} has no observed entries")]
    EmptyColumn { column: usize },

    #[error("the data matrix has no observed entries")]
    NoObservations,

    #[error("columns must be all continuous or all ordinal; found {0}")]
    MixedColumnKinds(String),

    #[error("reliability of entry ({row}, {col}) is undefined: the remaining imputed values are all zero")]
    UndefinedReliability { row: usize, col: usize },

    #[error("error metric denominator is zero")]
    ZeroDenominator,

    #[error("metric requested over an empty set of entries")]
    EmptySet,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Broad error category, used by the command line tool to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::InvalidConfig(_) | Error::BadRank { .. } => ErrorCategory::Usage,
            Error::SingularSystem
            | Error::ZeroRow { .. }
            | Error::EmptyInterval { .. }
            | Error::NonFiniteLatent { .. }
            | Error::UndefinedReliability { .. }
            | Error::ZeroDenominator => ErrorCategory::Numerical,
            _ => ErrorCategory::Data,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
