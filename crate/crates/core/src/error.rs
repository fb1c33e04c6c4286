use thiserror::Error;

#[derive(Debug, Error)]
pub enum KlvError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("truncation mismatch: {left} vs {right}")]
    TruncationMismatch { left: usize, right: usize },

    #[error("value out of range: {0}")]
    Range(String),

    #[error("outside operation domain: {0}")]
    Domain(String),

    #[error("tensor is not a Lie polynomial: level {level} Dynkin defect {defect:.3e}")]
    NotLie { level: usize, defect: f64 },

    #[error("invalid path: {0}")]
    InvalidPath(String),

    #[error("flow diverged at substep {substep}: {context}")]
    Divergence { substep: usize, context: String },

    #[error("tree has {required} leaves, above the cap of {cap}; raise the cap or use sampled mode")]
    LeafCap { required: u128, cap: u128 },

    #[error("failed to load {location}: {reason}")]
    Load { location: String, reason: String },

    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, KlvError>;
