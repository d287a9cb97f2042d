//! Training-phase forward passes and losses.
//!
//! One batch draws a shared rate index and SNR, a fading coefficient per
//! item, channel noise and quantization noise, all from counter-derived
//! streams, then runs: encode, hop (with equalization where applicable),
//! analog decode, analysis with per-rate scaling, noise quantization,
//! synthesis, and the entropy estimate from the conditional Gaussian plus
//! the factorized prior.

use candle_core::Tensor;
use hdjscc_core::channel::{linear_to_db, sample_rayleigh};
use hdjscc_core::rng::{purpose, stream};
use hdjscc_models::channel_graph::{standard_normal_tensor, BatchChannel, ChannelKind};
use hdjscc_models::compressor::{
    channel_scale, estimate_bpp, quantize_noise, uniform_noise_tensor,
};
use hdjscc_models::gaussian::likelihood_gaussian;
use hdjscc_models::FullModel;
use num_complex::Complex64;

use crate::{PipelineError, Result};

#[derive(Debug, Clone, Copy)]
pub struct StepStats {
    pub loss: f64,
    pub bpp: f64,
    pub mse: f64,
    pub lambda: f64,
    pub eta_db: f64,
}

/// What the squared error is measured against: the source image
/// (end-to-end objective) or the relay's analog reconstruction (the
/// rate-distortion analysis of the codec output).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistortionTarget {
    Source,
    RelayReconstruction,
}

/// Draws the per-item block fading for a batch from `(seed, epoch, batch,
/// item)` streams.
pub fn draw_batch_channel(
    kind: ChannelKind,
    eta: f64,
    batch_size: usize,
    seed: u64,
    epoch: usize,
    batch: usize,
) -> BatchChannel {
    let h: Vec<Complex64> = (0..batch_size)
        .map(|i| {
            if kind.is_fading() {
                let mut rng =
                    stream(seed, purpose::FADING, &[epoch as u64, batch as u64, i as u64]);
                sample_rayleigh(&mut rng)
            } else {
                Complex64::new(1.0, 0.0)
            }
        })
        .collect();
    BatchChannel { kind, eta, h }
}

fn nan_guard(value: f64, ctx: &StepContext) -> Result<f64> {
    if value.is_nan() || value.is_infinite() {
        return Err(PipelineError::Diverged {
            epoch: ctx.epoch,
            batch: ctx.batch,
            lambda: ctx.lambda,
            eta_db: linear_to_db(ctx.eta),
            what: format!("loss {value}"),
        });
    }
    Ok(value)
}

pub struct StepContext {
    pub seed: u64,
    pub epoch: usize,
    pub batch: usize,
    pub lambda: f64,
    pub ell: usize,
    pub eta: f64,
}

/// Source to relay: encode, hop, analog decode. Shared by every objective.
pub fn analog_link(
    model: &FullModel,
    s: &Tensor,
    bc: &BatchChannel,
    ell: usize,
    ctx: &StepContext,
) -> Result<(Tensor, Tensor)> {
    let (b, _c, h, w) = s.dims4()?;
    let enc_cond = model.cond(&bc.encoder_eta_db(), ell)?;
    let dec_cond = model.cond(&vec![bc.eta_db(); b], ell)?;
    let x = model.f_s.forward(s, &enc_cond)?;
    let mut rng = stream(
        ctx.seed,
        purpose::CHANNEL_NOISE,
        &[ctx.epoch as u64, ctx.batch as u64],
    );
    let noise = standard_normal_tensor(&mut rng, &x.dims2().map(|d| [d.0, d.1])?, model.dtype(), x.device())?;
    let x_hat = bc.propagate(&x, &noise)?;
    let s_tilde = model.g_d.forward(&x_hat, &dec_cond, h, w)?;
    Ok((x, s_tilde))
}

/// Analog-codec pretraining step: mean squared reconstruction error only.
pub fn jscc_step(
    model: &FullModel,
    s: &Tensor,
    bc: &BatchChannel,
    ctx: &StepContext,
) -> Result<(Tensor, StepStats)> {
    let (_x, s_tilde) = analog_link(model, s, bc, ctx.ell, ctx)?;
    let mse = (s - &s_tilde)?.sqr()?.mean_all()?;
    let loss = mse.clone();
    let m = mse.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
    let l = nan_guard(m, ctx)?;
    Ok((
        loss,
        StepStats {
            loss: l,
            bpp: 0.0,
            mse: m,
            lambda: ctx.lambda,
            eta_db: linear_to_db(ctx.eta),
        },
    ))
}

/// Full hybrid step: the weighted distortion plus the bit estimate.
pub fn hdjscc_step(
    model: &FullModel,
    s: &Tensor,
    bc: &BatchChannel,
    ctx: &StepContext,
    freeze_jscc: bool,
    target: DistortionTarget,
) -> Result<(Tensor, StepStats)> {
    let (b, _c, h, w) = s.dims4()?;
    let (_x, s_tilde) = analog_link(model, s, bc, ctx.ell, ctx)?;
    let s_tilde = if freeze_jscc { s_tilde.detach() } else { s_tilde };
    let dec_cond = model.cond(&vec![bc.eta_db(); b], ctx.ell)?;

    let z = channel_scale(
        &model.g_a.forward(&s_tilde, &dec_cond)?,
        &model.scaling.a(ctx.ell)?,
    )?;
    let v = channel_scale(
        &model.h_a.forward(&z, &dec_cond)?,
        &model.scaling.b(ctx.ell)?,
    )?;

    let mut qrng = stream(
        ctx.seed,
        purpose::QUANT_NOISE,
        &[ctx.epoch as u64, ctx.batch as u64],
    );
    let nz = uniform_noise_tensor(&mut qrng, z.dims(), model.dtype(), z.device())?;
    let nv = uniform_noise_tensor(&mut qrng, v.dims(), model.dtype(), v.device())?;
    let z_t = quantize_noise(&z, &nz)?;
    let v_t = quantize_noise(&v, &nv)?;

    let s_hat = model.g_s.forward(
        &channel_scale(&z_t, &model.scaling.a_prime(ctx.ell)?)?,
        &dec_cond,
    )?;
    let v_rescaled = channel_scale(&v_t, &model.scaling.b_prime(ctx.ell)?)?;
    let (mu, sigma) = model.h_s.forward(&v_rescaled, &dec_cond)?;
    let lik_z = likelihood_gaussian(&z_t, &mu, &sigma)?;
    let lik_v = model.prior.likelihood(&v_t)?;
    let bpp = estimate_bpp(&lik_z, &lik_v, h, w)?;

    let reference = match target {
        DistortionTarget::Source => s.clone(),
        DistortionTarget::RelayReconstruction => s_tilde.detach(),
    };
    let mse = (&reference - &s_hat)?.sqr()?.mean_all()?;
    let loss = ((&mse * ctx.lambda)? + &bpp)?;

    let m = mse.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
    let r = bpp.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
    let l = nan_guard(ctx.lambda * m + r, ctx)?;
    Ok((
        loss,
        StepStats {
            loss: l,
            bpp: r,
            mse: m,
            lambda: ctx.lambda,
            eta_db: linear_to_db(ctx.eta),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};
    use hdjscc_core::config::ExperimentConfig;

    fn tiny_model() -> FullModel {
        let mut cfg = ExperimentConfig::desk_32();
        cfg.jscc.internal_channels = 8;
        cfg.jscc.n_residual_blocks = 1;
        cfg.compressor.internal_channels = 8;
        cfg.compressor.c_z = 6;
        cfg.compressor.c_v = 4;
        FullModel::new(&cfg, DType::F32, 1).unwrap()
    }

    fn batch() -> Tensor {
        Tensor::rand(0f32, 1f32, (2, 3, 32, 32), &Device::Cpu).unwrap()
    }

    fn ctx(lambda: f64) -> StepContext {
        StepContext {
            seed: 3,
            epoch: 0,
            batch: 0,
            lambda,
            ell: 1,
            eta: hdjscc_core::channel::db_to_linear(5.0),
        }
    }

    #[test]
    fn zero_lambda_reduces_loss_to_the_rate() {
        let model = tiny_model();
        let s = batch();
        let c = ctx(0.0);
        let bc = draw_batch_channel(ChannelKind::Awgn, c.eta, 2, 3, 0, 0);
        let (_loss, stats) = hdjscc_step(&model, &s, &bc, &c, false, DistortionTarget::Source)
            .unwrap();
        assert_eq!(stats.loss, stats.bpp);
        assert!(stats.bpp > 0.0);
    }

    #[test]
    fn loss_is_never_below_the_rate() {
        let model = tiny_model();
        let s = batch();
        for lambda in [200.0, 3200.0] {
            let c = ctx(lambda);
            let bc = draw_batch_channel(ChannelKind::Awgn, c.eta, 2, 3, 0, 0);
            let (_l, stats) =
                hdjscc_step(&model, &s, &bc, &c, false, DistortionTarget::Source).unwrap();
            assert!(stats.loss >= stats.bpp);
            assert!(stats.mse > 0.0);
        }
    }

    #[test]
    fn steps_are_reproducible_given_the_same_counters() {
        let model = tiny_model();
        let s = batch();
        let c = ctx(800.0);
        let bc = draw_batch_channel(ChannelKind::RayleighCsit, c.eta, 2, 3, 1, 4);
        let (_l, a) = hdjscc_step(&model, &s, &bc, &c, true, DistortionTarget::Source).unwrap();
        let c2 = ctx(800.0);
        let bc2 = draw_batch_channel(ChannelKind::RayleighCsit, c2.eta, 2, 3, 1, 4);
        let (_l, b) = hdjscc_step(&model, &s, &bc2, &c2, true, DistortionTarget::Source).unwrap();
        assert_eq!(a.loss, b.loss);
        assert_eq!(a.bpp, b.bpp);
    }

    #[test]
    fn fading_draws_are_per_item_counter_derived() {
        let a = draw_batch_channel(ChannelKind::RayleighCsir, 1.0, 3, 9, 2, 5);
        let b = draw_batch_channel(ChannelKind::RayleighCsir, 1.0, 3, 9, 2, 5);
        assert_eq!(a.h, b.h);
        let c = draw_batch_channel(ChannelKind::RayleighCsir, 1.0, 3, 9, 2, 6);
        assert_ne!(a.h, c.h);
        assert_ne!(a.h[0], a.h[1]);
    }

    #[test]
    fn jscc_pretrain_step_is_pure_mse() {
        let model = tiny_model();
        let s = batch();
        let c = ctx(0.0);
        let bc = draw_batch_channel(ChannelKind::Awgn, c.eta, 2, 3, 0, 0);
        let (_l, stats) = jscc_step(&model, &s, &bc, &c).unwrap();
        assert_eq!(stats.loss, stats.mse);
        assert_eq!(stats.bpp, 0.0);
    }
}
