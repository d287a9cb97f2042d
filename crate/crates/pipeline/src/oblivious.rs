//! Oblivious relaying: the relay compresses its received signal with no
//! access to the source image or the source's encoder.
//!
//! The isolation is structural: everything in this module past the link
//! simulation takes only the received signal. `relay_step` has no image
//! parameter at all.

use candle_core::Tensor;
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use hdjscc_core::channel::db_to_linear;
use hdjscc_core::data::{DatasetStore, Split};
use hdjscc_core::metrics::psnr;
use hdjscc_core::rng::{purpose, stream};
use hdjscc_models::channel_graph::standard_normal_tensor;
use hdjscc_models::channel_graph::ChannelKind;
use hdjscc_models::compressor::{estimate_bpp, quantize_noise, quantize_round, uniform_noise_tensor};
use hdjscc_models::gaussian::likelihood_gaussian;
use hdjscc_models::oblivious::SignalCompressor;
use hdjscc_models::FullModel;

use crate::batching::{batch_tensor, image_to_tensor, tensor_to_images};
use crate::deploy::{decode_gaussian_segment, decode_hyper_segment, encode_gaussian_segment, encode_hyper_segment};
use crate::forward::{draw_batch_channel, StepStats};
use crate::trainer::TrainReport;
use crate::{PipelineError, Result};

/// One oblivious training step over received signals only:
/// `lambda * |y - y_hat|^2 + I`. No image tensor can reach this code path.
pub fn relay_step(
    comp: &SignalCompressor,
    y1: &Tensor,
    source_h: usize,
    source_w: usize,
    lambda: f64,
    seed: u64,
    epoch: usize,
    batch: usize,
) -> Result<(Tensor, StepStats)> {
    let y = comp.signal_to_tensor(y1, source_h, source_w)?;
    let z = comp.analyze(&y)?;
    let v = comp.hyper_analyze(&z)?;
    let mut qrng = stream(seed, purpose::QUANT_NOISE, &[epoch as u64, batch as u64, 1]);
    let nz = uniform_noise_tensor(&mut qrng, z.dims(), y.dtype(), y.device())?;
    let nv = uniform_noise_tensor(&mut qrng, v.dims(), y.dtype(), y.device())?;
    let z_t = quantize_noise(&z, &nz)?;
    let v_t = quantize_noise(&v, &nv)?;
    let y_hat = comp.synthesize(&z_t)?;
    let (mu, sigma) = comp.hyper_synthesize(&v_t)?;
    let lik_z = likelihood_gaussian(&z_t, &mu, &sigma)?;
    let lik_v = comp.prior.likelihood(&v_t)?;
    let bpp = estimate_bpp(&lik_z, &lik_v, source_h, source_w)?;
    let mse = (&y - &y_hat)?.sqr()?.mean_all()?;
    let loss = ((&mse * lambda)? + &bpp)?;
    let m = mse.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
    let r = bpp.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
    let l = lambda * m + r;
    if !l.is_finite() {
        return Err(PipelineError::Diverged {
            epoch,
            batch,
            lambda,
            eta_db: f64::NAN,
            what: format!("oblivious loss {l}"),
        });
    }
    Ok((
        loss,
        StepStats {
            loss: l,
            bpp: r,
            mse: m,
            lambda,
            eta_db: f64::NAN,
        },
    ))
}

/// Simulates the access link and hands out only the received signal
/// (detached: the analog codec is not trainable here).
pub fn simulate_link(
    jscc: &FullModel,
    s: &Tensor,
    eta_db: f64,
    ell: usize,
    seed: u64,
    epoch: usize,
    batch: usize,
) -> Result<Tensor> {
    let b = s.dim(0)?;
    let kind = ChannelKind::from_name(&jscc.cfg.channel)?;
    let bc = draw_batch_channel(kind, db_to_linear(eta_db), b, seed, epoch, batch);
    let enc_cond = jscc.cond(&bc.encoder_eta_db(), ell)?;
    let x = jscc.f_s.forward(s, &enc_cond)?;
    let mut rng = stream(seed, purpose::CHANNEL_NOISE, &[epoch as u64, batch as u64]);
    let noise = standard_normal_tensor(&mut rng, x.dims(), x.dtype(), x.device())?;
    Ok(bc.propagate(&x, &noise)?.detach())
}

/// Trains the oblivious compressor against received signals from a frozen
/// analog link at a fixed SNR.
pub fn train_oblivious(
    comp: &mut SignalCompressor,
    jscc: &FullModel,
    store: &DatasetStore,
    lambda: f64,
    eta_db: f64,
) -> Result<TrainReport> {
    let cfg = comp.cfg.clone();
    let (_ic, h, w) = store.image_shape();
    let mut opt = AdamW::new(
        comp.store.all_vars(),
        ParamsAdamW {
            lr: cfg.optimizer.learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        },
    )?;
    let mut report = TrainReport {
        step_losses: Vec::new(),
        val_losses: Vec::new(),
        final_lr: cfg.optimizer.learning_rate,
        steps: 0,
    };
    for epoch in 0..cfg.epochs {
        let order = crate::batching::epoch_indices(
            store.len(Split::Train),
            cfg.max_train_images,
            cfg.seed,
            epoch,
        );
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let s = batch_tensor(store, Split::Train, chunk, comp.store.dtype(), comp.store.device())?;
            let y1 = simulate_link(jscc, &s, eta_db, 1, cfg.seed, epoch, bi)?;
            let (loss, stats) = relay_step(comp, &y1, h, w, lambda, cfg.seed, epoch, bi)?;
            opt.backward_step(&loss)?;
            report.step_losses.push(stats);
            report.steps += 1;
        }
    }
    Ok(report)
}

/// Deploy-style evaluation: round, entropy-code and reconstruct the
/// received signal, run the analog decoder on the reconstruction, and
/// report distortion against the original image plus the coded rate.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_oblivious(
    comp: &SignalCompressor,
    jscc: &FullModel,
    store: &DatasetStore,
    split: Split,
    n: usize,
    eta_db: f64,
    lambda: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    let (_ic, h, w) = store.image_shape();
    let n = n.min(store.len(split));
    let snapshot = comp.prior.snapshot(&comp.store)?;
    let tables = snapshot.build_tables()?;
    let mut psnr_acc = 0.0;
    let mut bits_acc = 0u64;
    for i in 0..n {
        let img = store.get(split, i)?;
        let s = image_to_tensor(&img, jscc.dtype(), jscc.store.device())?;
        let y1 = simulate_link(jscc, &s, eta_db, 1, seed, 0, i)?;
        let y = comp.signal_to_tensor(&y1, h, w)?;
        let z = comp.analyze(&y)?;
        let z_hat_t = quantize_round(&z)?;
        let v = comp.hyper_analyze(&z)?;
        let v_hat_t = quantize_round(&v)?;
        let to_i64 = |t: &Tensor| -> Result<Vec<i64>> {
            Ok(t.to_dtype(candle_core::DType::F64)?
                .flatten_all()?
                .to_vec1::<f64>()?
                .iter()
                .map(|&x| x as i64)
                .collect())
        };
        let z_hat = to_i64(&z_hat_t)?;
        let v_hat = to_i64(&v_hat_t)?;
        let (mu_t, sigma_t) = comp.hyper_synthesize(&v_hat_t)?;
        let mu: Vec<f64> = mu_t.to_dtype(candle_core::DType::F64)?.flatten_all()?.to_vec1()?;
        let sigma: Vec<f64> = sigma_t.to_dtype(candle_core::DType::F64)?.flatten_all()?.to_vec1()?;

        let v_dims = v.dims4()?;
        let spatial = v_dims.2 * v_dims.3;
        let chan_of: Vec<usize> = (0..v_hat.len()).map(|j| j / spatial).collect();
        let b_v = encode_hyper_segment(&v_hat, &chan_of, &tables)?;
        let b_z = encode_gaussian_segment(&z_hat, &mu, &sigma)?;
        bits_acc += 8 * (b_v.len() + b_z.len()) as u64;

        // Losslessness check along the way.
        let v_back = decode_hyper_segment(&b_v, &chan_of, &tables, v_hat.len())?;
        let z_back = decode_gaussian_segment(&b_z, &mu, &sigma)?;
        if v_back != v_hat || z_back != z_hat {
            return Err(PipelineError::CorruptedStream(
                "oblivious latents failed the round trip".into(),
            ));
        }

        let y_rec = comp.synthesize(&z_hat_t)?;
        let flat = y_rec.reshape((1, y_rec.elem_count()))?;
        let cond = jscc.cond(&[eta_db], 1)?;
        let s_hat_t = jscc.g_d.forward(&flat, &cond, h, w)?;
        let s_hat = tensor_to_images(&s_hat_t)?.remove(0);
        psnr_acc += psnr(&img, &s_hat)?.min(crate::eval::PSNR_CAP_DB);
    }
    let _ = lambda;
    Ok((psnr_acc / n as f64, bits_acc as f64 / (n * h * w) as f64))
}
