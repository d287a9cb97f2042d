use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("training diverged at epoch {epoch}, batch {batch} (lambda {lambda}, eta {eta_db} dB): {what}")]
    Diverged {
        epoch: usize,
        batch: usize,
        lambda: f64,
        eta_db: f64,
        what: String,
    },
    #[error("corrupted stream: {0}")]
    CorruptedStream(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("baseline error: {0}")]
    Baseline(String),
    #[error(transparent)]
    Core(#[from] hdjscc_core::CoreError),
    #[error(transparent)]
    Model(#[from] hdjscc_models::ModelError),
    #[error(transparent)]
    Coding(#[from] hdjscc_entropy::CodingError),
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
