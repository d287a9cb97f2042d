//! Layer builders over the parameter store, plus the residual block shared
//! by the codec and the compressor transforms.

use candle_core::Tensor;
use candle_nn::{Conv2d, Conv2dConfig, ConvTranspose2d, ConvTranspose2dConfig, Linear, Module};

use crate::store::{Init, ParamStore};
use crate::Result;

pub fn conv2d(
    store: &mut ParamStore,
    name: &str,
    c_in: usize,
    c_out: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<Conv2d> {
    let fan_in = c_in * kernel * kernel;
    let weight = store.var(
        &format!("{name}.weight"),
        &[c_out, c_in, kernel, kernel],
        Init::KaimingUniform { fan_in },
    )?;
    let bound = (1.0 / fan_in as f64).sqrt();
    let bias = store.var(
        &format!("{name}.bias"),
        &[c_out],
        Init::Uniform {
            lo: -bound,
            hi: bound,
        },
    )?;
    Ok(Conv2d::new(
        weight,
        Some(bias),
        Conv2dConfig {
            padding,
            stride,
            dilation: 1,
            groups: 1,
            cudnn_fwd_algo: None,
        },
    ))
}

/// Stride-2, kernel-4, padding-1 transposed convolution: exact spatial
/// doubling without output padding.
pub fn deconv2d_double(
    store: &mut ParamStore,
    name: &str,
    c_in: usize,
    c_out: usize,
) -> Result<ConvTranspose2d> {
    let kernel = 4;
    let fan_in = c_in * kernel * kernel;
    let weight = store.var(
        &format!("{name}.weight"),
        &[c_in, c_out, kernel, kernel],
        Init::KaimingUniform { fan_in },
    )?;
    let bound = (1.0 / fan_in as f64).sqrt();
    let bias = store.var(
        &format!("{name}.bias"),
        &[c_out],
        Init::Uniform {
            lo: -bound,
            hi: bound,
        },
    )?;
    Ok(ConvTranspose2d::new(
        weight,
        Some(bias),
        ConvTranspose2dConfig {
            padding: 1,
            output_padding: 0,
            stride: 2,
            dilation: 1,
        },
    ))
}

pub fn linear(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize) -> Result<Linear> {
    let weight = store.var(
        &format!("{name}.weight"),
        &[d_out, d_in],
        Init::KaimingUniform { fan_in: d_in },
    )?;
    let bound = (1.0 / d_in as f64).sqrt();
    let bias = store.var(
        &format!("{name}.bias"),
        &[d_out],
        Init::Uniform {
            lo: -bound,
            hi: bound,
        },
    )?;
    Ok(Linear::new(weight, Some(bias)))
}

/// Per-channel parametric ReLU: `max(x, 0) + slope_c * min(x, 0)`.
pub struct PRelu {
    slope: Tensor, // [C]
}

impl PRelu {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        let slope = store.var(&format!("{name}.slope"), &[channels], Init::Const(0.2))?;
        Ok(Self { slope })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let c = self.slope.dim(0)?;
        let slope = self.slope.reshape((1, c, 1, 1))?;
        let neg = x.neg()?.relu()?.neg()?; // min(x, 0)
        Ok((x.relu()? + neg.broadcast_mul(&slope)?)?)
    }
}

/// Two 3x3 convolutions with a PReLU between them and an identity skip.
pub struct ResidualBlock {
    conv1: Conv2d,
    act: PRelu,
    conv2: Conv2d,
}

impl ResidualBlock {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            conv1: conv2d(store, &format!("{name}.conv1"), channels, channels, 3, 1, 1)?,
            act: PRelu::new(store, &format!("{name}.act"), channels)?,
            conv2: conv2d(store, &format!("{name}.conv2"), channels, channels, 3, 1, 1)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.conv1.forward(x)?;
        let y = self.act.forward(&y)?;
        let y = self.conv2.forward(&y)?;
        Ok((x + y)?)
    }
}

/// Numerically stable softplus: `max(x, 0) + ln(1 + exp(-|x|))`.
pub fn softplus(x: &Tensor) -> Result<Tensor> {
    let abs = x.abs()?;
    let log1p = (abs.neg()?.exp()? + 1.0)?.log()?;
    Ok((x.relu()? + log1p)?)
}

/// Logistic sigmoid built from tanh (stable at both tails).
pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((((x * 0.5)?.tanh()? + 1.0)? * 0.5)?)
}
