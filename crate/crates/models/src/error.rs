use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("rate index {ell} outside [1, {count}]")]
    RateIndex { ell: usize, count: usize },
    #[error("unknown parameter '{0}'")]
    UnknownParam(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("latent value {0} outside the raw 16-bit escape range")]
    EscapeRange(i64),
    #[error(transparent)]
    Core(#[from] hdjscc_core::CoreError),
    #[error(transparent)]
    Coding(#[from] hdjscc_entropy::CodingError),
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}
