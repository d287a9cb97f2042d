//! Hyperprior compressor at the relay: analysis/synthesis transforms with
//! SNR conditioning, the hyper path predicting the conditional Gaussian,
//! per-rate channel-wise scaling factors, and the quantization ops.

use candle_core::{DType, Tensor};
use candle_nn::{Conv2d, ConvTranspose2d, Module};
use hdjscc_core::config::ExperimentConfig;
use rand::Rng;

use crate::adapt::AdaptModule;
use crate::model::CondInput;
use crate::nn::{conv2d, deconv2d_double, sigmoid, PRelu, ResidualBlock};
use crate::store::{Init, ParamStore};
use crate::{ModelError, Result, SIGMA_MIN};

/// Clamp on the predicted log-scale before exponentiation.
const LOG_SIGMA_RANGE: (f64, f64) = (-13.0, 11.0);

fn maybe_sa(
    store: &mut ParamStore,
    site: &str,
    channels: usize,
    enabled: bool,
) -> Result<Option<AdaptModule>> {
    if enabled {
        Ok(Some(AdaptModule::new(
            store,
            &format!("sa_ra.{site}.sa"),
            channels,
            1,
        )?))
    } else {
        Ok(None)
    }
}

fn apply_sa(sa: &Option<AdaptModule>, x: Tensor, cond: &CondInput) -> Result<Tensor> {
    match sa {
        Some(m) => m.forward(&x, &cond.eta_std),
        None => Ok(x),
    }
}

/// `g_a`: image to main latent, two stride-2 stages.
pub struct AnalysisTransform {
    conv1: Conv2d,
    act1: PRelu,
    res: ResidualBlock,
    sa: Option<AdaptModule>,
    conv2: Conv2d,
}

impl AnalysisTransform {
    pub fn new(store: &mut ParamStore, cfg: &ExperimentConfig) -> Result<Self> {
        let n = cfg.compressor.internal_channels;
        Ok(Self {
            conv1: conv2d(store, "g_a.conv1", 3, n, 5, 2, 2)?,
            act1: PRelu::new(store, "g_a.act1", n)?,
            res: ResidualBlock::new(store, "g_a.res", n)?,
            sa: maybe_sa(store, "g_a", n, cfg.snr_adaptive)?,
            conv2: conv2d(store, "g_a.conv2", n, cfg.compressor.c_z, 5, 2, 2)?,
        })
    }

    pub fn forward(&self, s: &Tensor, cond: &CondInput) -> Result<Tensor> {
        let (_b, _c, h, w) = s.dims4()?;
        if h % 16 != 0 || w % 16 != 0 {
            return Err(ModelError::Shape(format!(
                "image dimensions {h}x{w} must be divisible by 16"
            )));
        }
        let x = self.act1.forward(&self.conv1.forward(s)?)?;
        let x = self.res.forward(&x)?;
        let x = apply_sa(&self.sa, x, cond)?;
        Ok(self.conv2.forward(&x)?)
    }
}

/// `g_s`: rescaled latent back to the image, mirroring `g_a`.
pub struct SynthesisTransform {
    up1: ConvTranspose2d,
    act1: PRelu,
    res: ResidualBlock,
    sa: Option<AdaptModule>,
    up2: ConvTranspose2d,
    act2: PRelu,
    tail: Conv2d,
}

impl SynthesisTransform {
    pub fn new(store: &mut ParamStore, cfg: &ExperimentConfig) -> Result<Self> {
        let n = cfg.compressor.internal_channels;
        Ok(Self {
            up1: deconv2d_double(store, "g_s.up1", cfg.compressor.c_z, n)?,
            act1: PRelu::new(store, "g_s.act1", n)?,
            res: ResidualBlock::new(store, "g_s.res", n)?,
            sa: maybe_sa(store, "g_s", n, cfg.snr_adaptive)?,
            up2: deconv2d_double(store, "g_s.up2", n, n)?,
            act2: PRelu::new(store, "g_s.act2", n)?,
            tail: conv2d(store, "g_s.tail", n, 3, 3, 1, 1)?,
        })
    }

    pub fn forward(&self, z: &Tensor, cond: &CondInput) -> Result<Tensor> {
        let x = self.act1.forward(&self.up1.forward(z)?)?;
        let x = self.res.forward(&x)?;
        let x = apply_sa(&self.sa, x, cond)?;
        let x = self.act2.forward(&self.up2.forward(&x)?)?;
        sigmoid(&self.tail.forward(&x)?)
    }
}

/// `h_a`: main latent to hyper-latent, two further stride-2 stages.
pub struct HyperAnalysis {
    conv1: Conv2d,
    act1: PRelu,
    sa: Option<AdaptModule>,
    conv2: Conv2d,
    act2: PRelu,
    conv3: Conv2d,
}

impl HyperAnalysis {
    pub fn new(store: &mut ParamStore, cfg: &ExperimentConfig) -> Result<Self> {
        let n = cfg.compressor.internal_channels;
        Ok(Self {
            conv1: conv2d(store, "h_a.conv1", cfg.compressor.c_z, n, 3, 1, 1)?,
            act1: PRelu::new(store, "h_a.act1", n)?,
            sa: maybe_sa(store, "h_a", n, cfg.snr_adaptive)?,
            conv2: conv2d(store, "h_a.conv2", n, n, 3, 2, 1)?,
            act2: PRelu::new(store, "h_a.act2", n)?,
            conv3: conv2d(store, "h_a.conv3", n, cfg.compressor.c_v, 3, 2, 1)?,
        })
    }

    pub fn forward(&self, z: &Tensor, cond: &CondInput) -> Result<Tensor> {
        let x = self.act1.forward(&self.conv1.forward(z)?)?;
        let x = apply_sa(&self.sa, x, cond)?;
        let x = self.act2.forward(&self.conv2.forward(&x)?)?;
        Ok(self.conv3.forward(&x)?)
    }
}

/// `h_s`: hyper-latent to the Gaussian parameters of the main latent
/// (mean and scale; the scale is predicted as a log).
pub struct HyperSynthesis {
    up1: ConvTranspose2d,
    act1: PRelu,
    sa: Option<AdaptModule>,
    up2: ConvTranspose2d,
    act2: PRelu,
    tail: Conv2d,
    c_z: usize,
}

impl HyperSynthesis {
    pub fn new(store: &mut ParamStore, cfg: &ExperimentConfig) -> Result<Self> {
        let n = cfg.compressor.internal_channels;
        Ok(Self {
            up1: deconv2d_double(store, "h_s.up1", cfg.compressor.c_v, n)?,
            act1: PRelu::new(store, "h_s.act1", n)?,
            sa: maybe_sa(store, "h_s", n, cfg.snr_adaptive)?,
            up2: deconv2d_double(store, "h_s.up2", n, n)?,
            act2: PRelu::new(store, "h_s.act2", n)?,
            tail: conv2d(store, "h_s.tail", n, 2 * cfg.compressor.c_z, 3, 1, 1)?,
            c_z: cfg.compressor.c_z,
        })
    }

    pub fn forward(&self, v: &Tensor, cond: &CondInput) -> Result<(Tensor, Tensor)> {
        let x = self.act1.forward(&self.up1.forward(v)?)?;
        let x = apply_sa(&self.sa, x, cond)?;
        let x = self.act2.forward(&self.up2.forward(&x)?)?;
        let out = self.tail.forward(&x)?;
        let mu = out.narrow(1, 0, self.c_z)?;
        let log_sigma = out
            .narrow(1, self.c_z, self.c_z)?
            .clamp(LOG_SIGMA_RANGE.0, LOG_SIGMA_RANGE.1)?;
        let sigma = log_sigma.exp()?.maximum(SIGMA_MIN)?;
        Ok((mu.contiguous()?, sigma.contiguous()?))
    }
}

/// Per-rate channel-wise gains, one set per lambda. Stored in log space so
/// the factors stay strictly positive; initialized to one.
pub struct ScalingFactors {
    a: Tensor,       // [L, C_z]
    a_prime: Tensor, // [L, C_z]
    b: Tensor,       // [L, C_v]
    b_prime: Tensor, // [L, C_v]
    lambda_count: usize,
}

impl ScalingFactors {
    pub fn new(store: &mut ParamStore, cfg: &ExperimentConfig) -> Result<Self> {
        let l = cfg.lambda_count();
        let (c_z, c_v) = (cfg.compressor.c_z, cfg.compressor.c_v);
        Ok(Self {
            a: store.var("scaling_factors.a", &[l, c_z], Init::Const(0.0))?,
            a_prime: store.var("scaling_factors.a_prime", &[l, c_z], Init::Const(0.0))?,
            b: store.var("scaling_factors.b", &[l, c_v], Init::Const(0.0))?,
            b_prime: store.var("scaling_factors.b_prime", &[l, c_v], Init::Const(0.0))?,
            lambda_count: l,
        })
    }

    fn row(&self, raw: &Tensor, ell: usize) -> Result<Tensor> {
        if ell == 0 || ell > self.lambda_count {
            return Err(ModelError::RateIndex {
                ell,
                count: self.lambda_count,
            });
        }
        let c = raw.dim(1)?;
        Ok(raw.narrow(0, ell - 1, 1)?.reshape(c)?.exp()?)
    }

    pub fn a(&self, ell: usize) -> Result<Tensor> {
        self.row(&self.a, ell)
    }

    pub fn a_prime(&self, ell: usize) -> Result<Tensor> {
        self.row(&self.a_prime, ell)
    }

    pub fn b(&self, ell: usize) -> Result<Tensor> {
        self.row(&self.b, ell)
    }

    pub fn b_prime(&self, ell: usize) -> Result<Tensor> {
        self.row(&self.b_prime, ell)
    }
}

/// Channel-wise product of a `[B, C, H, W]` tensor with per-channel
/// factors of length `C`.
pub fn channel_scale(t: &Tensor, factors: &Tensor) -> Result<Tensor> {
    let c = t.dim(1)?;
    if factors.dims() != [c] {
        return Err(ModelError::Shape(format!(
            "{c}-channel tensor scaled by {:?} factors",
            factors.dims()
        )));
    }
    Ok(t.broadcast_mul(&factors.reshape((1, c, 1, 1))?)?)
}

/// Elementwise nearest-integer rounding; ties round away from zero.
pub fn quantize_round(t: &Tensor) -> Result<Tensor> {
    Ok(t.round()?)
}

/// Training-phase quantization surrogate: additive noise from the provided
/// uniform draw.
pub fn quantize_noise(t: &Tensor, noise: &Tensor) -> Result<Tensor> {
    Ok((t + noise)?)
}

/// U(-1/2, 1/2) noise tensor from an explicit RNG stream.
pub fn uniform_noise_tensor<R: Rng>(
    rng: &mut R,
    shape: &[usize],
    dtype: DType,
    device: &candle_core::Device,
) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let v: Vec<f32> = (0..n).map(|_| rng.gen_range(-0.5f32..0.5)).collect();
    Ok(Tensor::from_vec(v, shape, device)?.to_dtype(dtype)?)
}

/// Rate estimate in bits per pixel, batch-averaged:
/// `(sum -log2 p_z + sum -log2 p_v) / (B * H * W)`.
pub fn estimate_bpp(lik_z: &Tensor, lik_v: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let b = lik_z.dim(0)?;
    let ln2 = std::f64::consts::LN_2;
    let bits_z = (lik_z.log()?.sum_all()? / -ln2)?;
    let bits_v = (lik_v.log()?.sum_all()? / -ln2)?;
    Ok(((bits_z + bits_v)? / (b * h * w) as f64)?)
}

/// Per-image rate estimates, shape `[B]`.
pub fn estimate_bpp_per_image(lik_z: &Tensor, lik_v: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let b = lik_z.dim(0)?;
    let ln2 = std::f64::consts::LN_2;
    let bits_z = (lik_z.log()?.reshape((b, ()))?.sum(1)? / -ln2)?;
    let bits_v = (lik_v.log()?.reshape((b, ()))?.sum(1)? / -ln2)?;
    Ok(((bits_z + bits_v)? / (h * w) as f64)?)
}
