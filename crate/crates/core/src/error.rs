use thiserror::Error;

/// Errors raised anywhere in the simulator.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("capacity error: {tensor} needs {needed} bits per indivisible unit but its partition holds {available}")]
    Capacity {
        tensor: String,
        needed: u64,
        available: u64,
    },

    #[error("malformed {format} data: {reason}")]
    Format { format: &'static str, reason: String },

    #[error("oracle mismatch in {layer}: {detail}")]
    OracleMismatch { layer: String, detail: String },

    #[error("pruning bound violated: {0}")]
    BoundViolation(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl SimError {
    /// Short machine-readable tag for the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            SimError::Shape(_) => "shape",
            SimError::Index(_) => "index",
            SimError::Config(_) => "config",
            SimError::Capacity { .. } => "capacity",
            SimError::Format { .. } => "format",
            SimError::OracleMismatch { .. } => "oracle_mismatch",
            SimError::BoundViolation(_) => "bound_violation",
            SimError::Io(_) => "io",
            SimError::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, SimError>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(SimError::Shape(msg.into()))
}
