//! Channel-wise feature modulation conditioned on channel quality (SA) or
//! on the target rate index (RA).
//!
//! The gate is a two-layer MLP over the concatenation of per-channel
//! spatial means and the conditioning vector, with hidden width `C/2` and a
//! sigmoid-bounded output multiplied onto the feature channels.

use candle_core::Tensor;
use candle_nn::{Linear, Module};

use crate::nn::{linear, sigmoid};
use crate::store::ParamStore;
use crate::{ModelError, Result};

pub struct AdaptModule {
    fc1: Linear,
    fc2: Linear,
    channels: usize,
    cond_dim: usize,
}

impl AdaptModule {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        cond_dim: usize,
    ) -> Result<Self> {
        let hidden = (channels / 2).max(1);
        Ok(Self {
            fc1: linear(store, &format!("{name}.fc1"), channels + cond_dim, hidden)?,
            fc2: linear(store, &format!("{name}.fc2"), hidden, channels)?,
            channels,
            cond_dim,
        })
    }

    /// Gains in `(0, 1)` for each feature channel of each batch item.
    pub fn gains(&self, z: &Tensor, cond: &Tensor) -> Result<Tensor> {
        let (b, c, _h, _w) = z.dims4()?;
        if c != self.channels {
            return Err(ModelError::Shape(format!(
                "adapt module built for {} channels, got {c}",
                self.channels
            )));
        }
        if cond.dims() != [b, self.cond_dim] {
            return Err(ModelError::Shape(format!(
                "conditioning shape {:?}, expected [{b}, {}]",
                cond.dims(),
                self.cond_dim
            )));
        }
        let means = z.mean(3)?.mean(2)?; // [B, C]
        let inp = Tensor::cat(&[&means, cond], 1)?;
        let hidden = self.fc1.forward(&inp)?.relu()?;
        sigmoid(&self.fc2.forward(&hidden)?)
    }

    pub fn forward(&self, z: &Tensor, cond: &Tensor) -> Result<Tensor> {
        let (b, c, _h, _w) = z.dims4()?;
        let w = self.gains(z, cond)?.reshape((b, c, 1, 1))?;
        Ok(z.broadcast_mul(&w)?)
    }

    /// Channel-wise product against externally supplied gains; the
    /// modulation rule shared with [`forward`](Self::forward).
    pub fn apply_gains(z: &Tensor, gains: &Tensor) -> Result<Tensor> {
        let (b, c, _h, _w) = z.dims4()?;
        Ok(z.broadcast_mul(&gains.reshape((b, c, 1, 1))?)?)
    }
}

/// One-hot encoding of a 1-based rate index for RA conditioning.
pub fn one_hot_ell(
    ell: usize,
    count: usize,
    batch: usize,
    dtype: candle_core::DType,
    device: &candle_core::Device,
) -> Result<Tensor> {
    if ell == 0 || ell > count {
        return Err(ModelError::RateIndex { ell, count });
    }
    let mut row = vec![0f32; count];
    row[ell - 1] = 1.0;
    let t = Tensor::from_vec(row, (1, count), device)?.to_dtype(dtype)?;
    Ok(t.expand((batch, count))?.contiguous()?)
}
