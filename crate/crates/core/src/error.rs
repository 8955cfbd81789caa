use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("constraint violation: {0}")]
    Constraint(String),

    #[error("unsupported quantizer resolution: {0} bits (max 16)")]
    UnsupportedResolution(u32),

    #[error("instance too large for dense evaluation: {rows} rows exceeds cap {cap}")]
    SizeGuard { rows: usize, cap: usize },

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
