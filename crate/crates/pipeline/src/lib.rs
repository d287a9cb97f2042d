//! End-to-end assembly: training loops for every system variant,
//! deployment to self-describing bitstreams, checkpoints, baselines and
//! rate-distortion evaluation.

pub mod baseline;
pub mod batching;
pub mod bitstream;
pub mod checkpoint;
pub mod deploy;
pub mod error;
pub mod eval;
pub mod forward;
pub mod harness;
pub mod oblivious;
pub mod rd_analysis;
pub mod trainer;
pub mod twouser;

pub use error::PipelineError;

pub type Result<T> = std::result::Result<T, PipelineError>;
