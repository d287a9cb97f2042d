//! Trainable modules: the analog joint source-channel codec with SNR- and
//! rate-adaptive feature modulation, and the hyperprior compressor with
//! conditional Gaussian and factorized entropy models.

pub mod adapt;
pub mod channel_graph;
pub mod compressor;
pub mod error;
pub mod gaussian;
pub mod gradcheck;
pub mod jscc;
pub mod model;
pub mod nn;
pub mod oblivious;
pub mod prior;
pub mod report;
pub mod store;

pub use error::ModelError;
pub use model::{CondInput, FullModel};
pub use store::{Init, ParamStore};

pub type Result<T> = std::result::Result<T, ModelError>;

/// Probability floor applied to every likelihood so the arithmetic coder
/// never meets a zero-mass symbol.
pub const PROB_FLOOR: f64 = 1.0 / 65536.0;

/// Floor on predicted Gaussian scales.
pub const SIGMA_MIN: f64 = 1e-6;

/// Latent coding support is `[-SUPPORT_RADIUS, SUPPORT_RADIUS]` plus an
/// escape symbol carrying out-of-range values as raw 16-bit integers.
pub const SUPPORT_RADIUS: i64 = 127;
