use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),
    #[error("singular fading coefficient (h = 0)")]
    SingularFading,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown strategy '{name}' (available: {available})")]
    UnknownStrategy { name: String, available: String },
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("quantizer error: {0}")]
    Quantizer(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
