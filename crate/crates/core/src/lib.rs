//! Core primitives for hybrid analog/digital image delivery over a
//! wireless-access-plus-wired-backhaul network: complex-baseband channel
//! simulation, reproducible RNG streams, quality metrics, vector-quantization
//! baselines, dataset stores and experiment configuration.

pub mod channel;
pub mod config;
pub mod data;
pub mod error;
pub mod metrics;
pub mod rng;
pub mod signal;
pub mod vq;

pub use error::CoreError;
pub use signal::ComplexSignal;

pub type Result<T> = std::result::Result<T, CoreError>;
