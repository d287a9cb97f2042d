//! Compressor for oblivious relaying: a hyperprior over the received
//! codeword itself, viewed as its pre-flatten feature tensor. The relay
//! needs no knowledge of the source distribution or the source's encoder.
//!
//! The signal already sits at quarter resolution, so each transform uses a
//! single stride-2 stage; the synthesis output is unbounded (codewords are
//! not pixels).

use candle_core::Tensor;
use candle_nn::{Conv2d, ConvTranspose2d, Module};
use hdjscc_core::config::ExperimentConfig;

use crate::nn::{conv2d, deconv2d_double, PRelu, ResidualBlock};
use crate::prior::FactorizedPrior;
use crate::store::ParamStore;
use crate::{ModelError, Result};

pub struct SignalCompressor {
    pub cfg: ExperimentConfig,
    pub store: ParamStore,
    ga_conv1: Conv2d,
    ga_act1: PRelu,
    ga_res: ResidualBlock,
    ga_conv2: Conv2d,
    ha_conv1: Conv2d,
    ha_act1: PRelu,
    ha_conv2: Conv2d,
    hs_up: ConvTranspose2d,
    hs_act: PRelu,
    hs_tail: Conv2d,
    gs_up: ConvTranspose2d,
    gs_act: PRelu,
    gs_res: ResidualBlock,
    gs_tail: Conv2d,
    pub prior: FactorizedPrior,
    c_z: usize,
    signal_channels: usize,
}

impl SignalCompressor {
    pub fn new(cfg: &ExperimentConfig, dtype: candle_core::DType, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new(dtype, seed);
        let n = cfg.compressor.internal_channels;
        let (c_z, c_v) = (cfg.compressor.c_z, cfg.compressor.c_v);
        let c_sig = cfg.jscc.c_out;
        let me = Self {
            ga_conv1: conv2d(&mut store, "g_a.conv1", c_sig, n, 3, 1, 1)?,
            ga_act1: PRelu::new(&mut store, "g_a.act1", n)?,
            ga_res: ResidualBlock::new(&mut store, "g_a.res", n)?,
            ga_conv2: conv2d(&mut store, "g_a.conv2", n, c_z, 3, 2, 1)?,
            ha_conv1: conv2d(&mut store, "h_a.conv1", c_z, n, 3, 1, 1)?,
            ha_act1: PRelu::new(&mut store, "h_a.act1", n)?,
            ha_conv2: conv2d(&mut store, "h_a.conv2", n, c_v, 3, 2, 1)?,
            hs_up: deconv2d_double(&mut store, "h_s.up", c_v, n)?,
            hs_act: PRelu::new(&mut store, "h_s.act", n)?,
            hs_tail: conv2d(&mut store, "h_s.tail", n, 2 * c_z, 3, 1, 1)?,
            gs_up: deconv2d_double(&mut store, "g_s.up", c_z, n)?,
            gs_act: PRelu::new(&mut store, "g_s.act", n)?,
            gs_res: ResidualBlock::new(&mut store, "g_s.res", n)?,
            gs_tail: conv2d(&mut store, "g_s.tail", n, c_sig, 3, 1, 1)?,
            prior: FactorizedPrior::new(
                &mut store,
                "prior",
                c_v,
                cfg.compressor.prior_stages,
                cfg.compressor.prior_init_scale,
            )?,
            cfg: cfg.clone(),
            store,
            c_z,
            signal_channels: c_sig,
        };
        Ok(me)
    }

    /// Reshapes the flat real view `[B, 2k]` to the codeword feature
    /// geometry `[B, c_out, H/4, W/4]`.
    pub fn signal_to_tensor(&self, y: &Tensor, h: usize, w: usize) -> Result<Tensor> {
        let (b, n) = y.dims2()?;
        let (hq, wq) = (h / 4, w / 4);
        if n != self.signal_channels * hq * wq {
            return Err(ModelError::Shape(format!(
                "signal length {n} does not match {}x{hq}x{wq}",
                self.signal_channels
            )));
        }
        Ok(y.reshape((b, self.signal_channels, hq, wq))?)
    }

    pub fn analyze(&self, y: &Tensor) -> Result<Tensor> {
        let x = self.ga_act1.forward(&self.ga_conv1.forward(y)?)?;
        let x = self.ga_res.forward(&x)?;
        Ok(self.ga_conv2.forward(&x)?)
    }

    pub fn hyper_analyze(&self, z: &Tensor) -> Result<Tensor> {
        let x = self.ha_act1.forward(&self.ha_conv1.forward(z)?)?;
        Ok(self.ha_conv2.forward(&x)?)
    }

    pub fn hyper_synthesize(&self, v: &Tensor) -> Result<(Tensor, Tensor)> {
        let x = self.hs_act.forward(&self.hs_up.forward(v)?)?;
        let out = self.hs_tail.forward(&x)?;
        let mu = out.narrow(1, 0, self.c_z)?;
        let sigma = out
            .narrow(1, self.c_z, self.c_z)?
            .clamp(-13.0, 11.0)?
            .exp()?
            .maximum(crate::SIGMA_MIN)?;
        Ok((mu.contiguous()?, sigma.contiguous()?))
    }

    pub fn synthesize(&self, z: &Tensor) -> Result<Tensor> {
        let x = self.gs_act.forward(&self.gs_up.forward(z)?)?;
        let x = self.gs_res.forward(&x)?;
        Ok(self.gs_tail.forward(&x)?)
    }
}
