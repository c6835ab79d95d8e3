use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("degenerate point cloud")]
    DegeneratePointCloud,

    #[error("unsupported action {action} at step {step}: behavior probability is zero")]
    UnsupportedAction { step: usize, action: usize },

    #[error("return {value} outside normalization range [{min}, {max}]")]
    ReturnOutOfRange { value: f64, min: f64, max: f64 },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("hypothesis class rejected at level delta: minimum attainable loss {min_loss:.6e} exceeds lambda_k {lambda_k:.6e}")]
    Rejected { min_loss: f64, lambda_k: f64 },

    #[error("solver did not produce a certificate within {iterations} iterations")]
    NotCertified { iterations: usize },

    #[error("singular linear system")]
    Singular,

    #[error("problem size {n} exceeds cap {cap}")]
    TooLarge { n: usize, cap: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
