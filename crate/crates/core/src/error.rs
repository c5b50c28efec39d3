use thiserror::Error;

/// Errors produced anywhere in the virtual-sensor pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{file}:{line}: parse error: {msg}")]
    Parse {
        file: String,
        line: u64,
        msg: String,
    },

    #[error("{file}:{line}: unknown sensor id `{id}`")]
    UnknownSensor { file: String, line: u64, id: String },

    #[error("{file}:{line}: timestamp `{value}` is not an hour-aligned UTC timestamp")]
    Timestamp {
        file: String,
        line: u64,
        value: String,
    },

    #[error("{file}:{line}: duplicate reading for sensor `{id}` at {timestamp}")]
    DuplicateReading {
        file: String,
        line: u64,
        id: String,
        timestamp: String,
    },

    #[error("invalid location `{id}`: {reason}")]
    InvalidLocation { id: String, reason: String },

    #[error("feature `{0}` has fewer than 2 present observations")]
    DegenerateFeature(String),

    #[error("dataset is already standardized")]
    AlreadyStandardized,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite training loss {value} at epoch {epoch}")]
    NonFiniteLoss { epoch: usize, value: f64 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
