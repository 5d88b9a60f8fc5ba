use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lattice parameters: {0}")]
    Lattice(String),
    #[error("interval ({level}, {index}) out of range: {reason}")]
    Interval {
        level: u32,
        index: u64,
        reason: &'static str,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("matrix is not Hermitian (asymmetry {0:.3e})")]
    NotHermitian(f64),
    #[error("parameter out of range: {0}")]
    Param(String),
    #[error("incomplete Haar coefficient set: {0}")]
    Incomplete(String),
    #[error("operator dimension {dim} exceeds cap {cap}")]
    DimensionCap { dim: usize, cap: usize },
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("every trial was degenerate")]
    AllDegenerate,
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
