use thiserror::Error;

#[derive(Debug, Error)]
pub enum PompError {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    /// All particle weights were zero at the given (1-based) time index.
    #[error("filtering failure at time index {time_index}")]
    FilteringFailure { time_index: usize },

    #[error("too many filtering failures: {failures} exceeds max_fail = {max_fail}")]
    FilteringLimitExceeded { failures: usize, max_fail: usize },

    #[error("model contract violated: {0}")]
    ModelContract(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("index {index} out of range: {detail}")]
    Range { index: usize, detail: String },

    #[error("config validation failed:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PompError>;
