//! The deployment path: rounding quantization, exact entropy coding of
//! both latents, container framing, and the destination-side decode that
//! reproduces the relay's prediction bit for bit.
//!
//! The hyper-latent is decoded first; its synthesis conditions the main
//! latent's tables (stream order: header, `b_v`, `b_z`). Out-of-support
//! values ride an escape symbol followed by the raw 16-bit integer after
//! the arithmetic segment. The SNR entering compressor conditioning is
//! quantized to f32 once, because that is what the container header
//! carries and both sides must compute identical tables.

use candle_core::Tensor;
use hdjscc_core::channel::{db_to_linear, ChannelState};
use hdjscc_core::data::ImageTensor;
use hdjscc_core::metrics::{psnr, ssim};
use hdjscc_core::rng::{purpose, stream};
use hdjscc_entropy::{ac_decode_with_consumed, ac_encode, CdfTable, TableSeq};
use hdjscc_models::channel_graph::{standard_normal_tensor, BatchChannel, ChannelKind};
use hdjscc_models::compressor::{channel_scale, quantize_round};
use hdjscc_models::gaussian::{
    discretized_gaussian_prob, gaussian_cdf_table, latent_from_residual, residual_symbol,
};
use hdjscc_models::prior::PriorSnapshot;
use hdjscc_models::{FullModel, ModelError, PROB_FLOOR, SUPPORT_RADIUS};

use crate::batching::{image_to_tensor, tensor_to_images};
use crate::bitstream::{backhaul_latency, read_container, write_container, ContainerHeader};
use crate::{PipelineError, Result};

/// One deployed image, relay side.
pub struct DeployOutput {
    pub container: Vec<u8>,
    pub bits_v: usize,
    pub bits_z: usize,
    /// Arithmetic-coded payload bits, `8 * (|b_v| + |b_z|)`.
    pub payload_bits: u64,
    pub bpp_coded: f64,
    /// `H W I` estimate on the rounded latents, divided by `H W`.
    pub bpp_estimate: f64,
    /// Relay-side prediction of the destination reconstruction.
    pub s_hat: ImageTensor,
    /// The relay's analog reconstruction fed to the compressor.
    pub s_tilde: ImageTensor,
    pub k_prime: u64,
}

fn tensor_to_i64(t: &Tensor) -> Result<Vec<i64>> {
    Ok(t.to_dtype(candle_core::DType::F64)?
        .flatten_all()?
        .to_vec1::<f64>()?
        .iter()
        .map(|&v| v as i64)
        .collect())
}

fn tensor_to_f64(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.to_dtype(candle_core::DType::F64)?
        .flatten_all()?
        .to_vec1::<f64>()?)
}

fn check_escape_range(value: i64) -> Result<i16> {
    i16::try_from(value).map_err(|_| PipelineError::Model(ModelError::EscapeRange(value)))
}

/// Encodes hyper-latent integers against per-channel prior tables; escapes
/// carry the raw value.
pub fn encode_hyper_segment(
    v_hat: &[i64],
    channel_of: &[usize],
    tables: &[CdfTable],
) -> Result<Vec<u8>> {
    let escape = SUPPORT_RADIUS + 1;
    let mut coded = Vec::with_capacity(v_hat.len());
    let mut raws: Vec<u8> = Vec::new();
    for &s in v_hat {
        if (-SUPPORT_RADIUS..=SUPPORT_RADIUS).contains(&s) {
            coded.push(s);
        } else {
            coded.push(escape);
            raws.extend_from_slice(&check_escape_range(s)?.to_be_bytes());
        }
    }
    let mut bytes = ac_encode(
        &coded,
        TableSeq::ByIndex {
            tables,
            indices: channel_of,
        },
    )?;
    bytes.extend_from_slice(&raws);
    Ok(bytes)
}

pub fn decode_hyper_segment(
    bytes: &[u8],
    channel_of: &[usize],
    tables: &[CdfTable],
    n: usize,
) -> Result<Vec<i64>> {
    let (coded, consumed) = ac_decode_with_consumed(
        bytes,
        TableSeq::ByIndex {
            tables,
            indices: channel_of,
        },
        n,
    )?;
    resolve_escapes(coded, &bytes[consumed.min(bytes.len())..], SUPPORT_RADIUS + 1)
}

fn resolve_escapes(coded: Vec<i64>, mut raws: &[u8], escape: i64) -> Result<Vec<i64>> {
    let mut out = Vec::with_capacity(coded.len());
    for s in coded {
        if s == escape {
            if raws.len() < 2 {
                return Err(PipelineError::CorruptedStream(
                    "escape payload truncated".into(),
                ));
            }
            out.push(i64::from(i16::from_be_bytes([raws[0], raws[1]])));
            raws = &raws[2..];
        } else {
            out.push(s);
        }
    }
    Ok(out)
}

/// Encodes main-latent integers under per-element Gaussian tables built
/// from `(mu, sigma)`; symbols are mean-shifted residuals.
pub fn encode_gaussian_segment(z_hat: &[i64], mu: &[f64], sigma: &[f64]) -> Result<Vec<u8>> {
    let mut tables = Vec::with_capacity(z_hat.len());
    let mut coded = Vec::with_capacity(z_hat.len());
    let mut raws: Vec<u8> = Vec::new();
    for i in 0..z_hat.len() {
        let table = gaussian_cdf_table(mu[i], sigma[i])?;
        let escape = table.support_max();
        let r = residual_symbol(z_hat[i], mu[i]);
        if r >= table.support_offset() && r < escape {
            coded.push(r);
        } else {
            coded.push(escape);
            raws.extend_from_slice(&check_escape_range(r)?.to_be_bytes());
        }
        tables.push(table);
    }
    let mut bytes = ac_encode(&coded, TableSeq::PerSymbol(&tables))?;
    bytes.extend_from_slice(&raws);
    Ok(bytes)
}

pub fn decode_gaussian_segment(
    bytes: &[u8],
    mu: &[f64],
    sigma: &[f64],
) -> Result<Vec<i64>> {
    let n = mu.len();
    let tables: Vec<CdfTable> = (0..n)
        .map(|i| gaussian_cdf_table(mu[i], sigma[i]))
        .collect::<hdjscc_models::Result<_>>()?;
    let (coded, consumed) = ac_decode_with_consumed(bytes, TableSeq::PerSymbol(&tables), n)?;
    let mut raws = &bytes[consumed.min(bytes.len())..];
    let mut out = Vec::with_capacity(n);
    for (i, s) in coded.into_iter().enumerate() {
        let escape = tables[i].support_max();
        let r = if s == escape {
            if raws.len() < 2 {
                return Err(PipelineError::CorruptedStream(
                    "escape payload truncated".into(),
                ));
            }
            let raw = i64::from(i16::from_be_bytes([raws[0], raws[1]]));
            raws = &raws[2..];
            raw
        } else {
            s
        };
        out.push(latent_from_residual(r, mu[i]));
    }
    Ok(out)
}

/// Per-channel index of each element in a flattened `[1, C, H, W]` tensor.
fn channel_indices(c: usize, spatial: usize) -> Vec<usize> {
    (0..c * spatial).map(|i| i / spatial).collect()
}

/// Compression of one image tensor to coded segments plus the predicted
/// reconstruction (the shared deployment core; also the pure-compression
/// mode used by the digital baseline's internal source codec).
pub struct CompressedImage {
    pub b_v: Vec<u8>,
    pub b_z: Vec<u8>,
    pub s_hat: ImageTensor,
    pub bpp_estimate: f64,
}

/// Rounds, entropy-codes and reconstructs an image through the compressor
/// chain, conditioned on the (f32-quantized) SNR and rate index.
pub fn compress_reconstruct(
    model: &FullModel,
    prior_tables: &[CdfTable],
    input: &Tensor,
    eta_db: f64,
    ell: usize,
) -> Result<CompressedImage> {
    let (_b, _c, h, w) = input.dims4()?;
    let device = model.store.device().clone();
    let dtype = model.dtype();
    let dec_cond = model.cond(&[eta_db], ell)?;

    let z = channel_scale(&model.g_a.forward(input, &dec_cond)?, &model.scaling.a(ell)?)?;
    let z_hat = tensor_to_i64(&quantize_round(&z)?)?;
    let v = channel_scale(&model.h_a.forward(&z, &dec_cond)?, &model.scaling.b(ell)?)?;
    let v_hat = tensor_to_i64(&quantize_round(&v)?)?;

    let (c_z, c_v) = (model.cfg.compressor.c_z, model.cfg.compressor.c_v);
    let (zh, zw) = (h / 4, w / 4);
    let (vh, vw) = (h / 16, w / 16);

    let v_hat_tensor = Tensor::from_vec(
        v_hat.iter().map(|&x| x as f32).collect::<Vec<f32>>(),
        (1, c_v, vh, vw),
        &device,
    )?
    .to_dtype(dtype)?;
    let v_rescaled = channel_scale(&v_hat_tensor, &model.scaling.b_prime(ell)?)?;
    let (mu_t, sigma_t) = model.h_s.forward(&v_rescaled, &dec_cond)?;
    let mu = tensor_to_f64(&mu_t)?;
    let sigma = tensor_to_f64(&sigma_t)?;

    let b_v = encode_hyper_segment(&v_hat, &channel_indices(c_v, vh * vw), prior_tables)?;
    let b_z = encode_gaussian_segment(&z_hat, &mu, &sigma)?;

    let z_hat_tensor = Tensor::from_vec(
        z_hat.iter().map(|&x| x as f32).collect::<Vec<f32>>(),
        (1, c_z, zh, zw),
        &device,
    )?
    .to_dtype(dtype)?;
    let s_hat_t = model.g_s.forward(
        &channel_scale(&z_hat_tensor, &model.scaling.a_prime(ell)?)?,
        &dec_cond,
    )?;
    let s_hat = tensor_to_images(&s_hat_t)?.remove(0);

    // Rate estimate on the rounded latents, floored like the coder.
    let snapshot = model.prior.snapshot(&model.store)?;
    let mut bits = 0.0f64;
    for i in 0..z_hat.len() {
        let p = discretized_gaussian_prob(z_hat[i] as f64, mu[i], sigma[i]).max(PROB_FLOOR);
        bits -= p.log2();
    }
    for (i, &vv) in v_hat.iter().enumerate() {
        let p = snapshot.prob(i / (vh * vw), vv).max(PROB_FLOOR);
        bits -= p.log2();
    }
    Ok(CompressedImage {
        b_v,
        b_z,
        s_hat,
        bpp_estimate: bits / (h * w) as f64,
    })
}

/// The relay's deployment pass for one image.
pub fn relay_deploy(
    model: &FullModel,
    prior_tables: &[CdfTable],
    source: &ImageTensor,
    state: &ChannelState,
    backhaul_rate: f64,
    noise_seed: u64,
    noise_tag: u64,
) -> Result<DeployOutput> {
    let (_c, h, w) = source.shape();
    let kind = ChannelKind::from_name(&model.cfg.channel)?;
    let device = model.store.device().clone();
    let dtype = model.dtype();

    // Header-quantized SNR: both sides condition on the f32 value.
    let eta_db_f32 = hdjscc_core::channel::linear_to_db(state.eta) as f32;
    let eta_db = f64::from(eta_db_f32);
    let ell = state.ell;

    let s = image_to_tensor(source, dtype, &device)?;
    let bc = BatchChannel {
        kind,
        eta: state.eta,
        h: vec![state.h],
    };
    let enc_cond = model.cond(&bc.encoder_eta_db(), ell)?;
    let dec_cond = model.cond(&[eta_db], ell)?;

    let x = model.f_s.forward(&s, &enc_cond)?;
    let mut rng = stream(noise_seed, purpose::CHANNEL_NOISE, &[noise_tag]);
    let noise = standard_normal_tensor(&mut rng, x.dims(), dtype, &device)?;
    let x_hat = bc.propagate(&x, &noise)?;
    let s_tilde = model.g_d.forward(&x_hat, &dec_cond, h, w)?;

    let compressed = compress_reconstruct(model, prior_tables, &s_tilde, eta_db, ell)?;
    let s_tilde_img = tensor_to_images(&s_tilde)?.remove(0);

    let header = ContainerHeader {
        height: h as u16,
        width: w as u16,
        lambda_index: ell as u8,
        eta_db: eta_db_f32,
        len_v: compressed.b_v.len() as u32,
        len_z: compressed.b_z.len() as u32,
    };
    let payload_bits = 8 * (compressed.b_v.len() + compressed.b_z.len()) as u64;
    let container = write_container(&header, &compressed.b_v, &compressed.b_z)?;
    Ok(DeployOutput {
        bits_v: 8 * compressed.b_v.len(),
        bits_z: 8 * compressed.b_z.len(),
        payload_bits,
        bpp_coded: payload_bits as f64 / (h * w) as f64,
        bpp_estimate: compressed.bpp_estimate,
        s_hat: compressed.s_hat,
        s_tilde: s_tilde_img,
        k_prime: backhaul_latency(payload_bits, backhaul_rate),
        container,
    })
}

/// Destination-side reconstruction from a container.
pub fn destination_decode(
    model: &FullModel,
    prior_tables: &[CdfTable],
    container: &[u8],
) -> Result<ImageTensor> {
    let (header, b_v, b_z) = read_container(container)?;
    let (h, w) = (header.height as usize, header.width as usize);
    let ell = header.lambda_index as usize;
    let eta_db = f64::from(header.eta_db);
    let device = model.store.device().clone();
    let dtype = model.dtype();
    let dec_cond = model.cond(&[eta_db], ell)?;

    let (c_z, c_v) = (model.cfg.compressor.c_z, model.cfg.compressor.c_v);
    let (zh, zw) = (h / 4, w / 4);
    let (vh, vw) = (h / 16, w / 16);

    let v_hat = decode_hyper_segment(b_v, &channel_indices(c_v, vh * vw), prior_tables, c_v * vh * vw)?;
    let v_hat_tensor = Tensor::from_vec(
        v_hat.iter().map(|&x| x as f32).collect::<Vec<f32>>(),
        (1, c_v, vh, vw),
        &device,
    )?
    .to_dtype(dtype)?;
    let v_rescaled = channel_scale(&v_hat_tensor, &model.scaling.b_prime(ell)?)?;
    let (mu_t, sigma_t) = model.h_s.forward(&v_rescaled, &dec_cond)?;
    let mu = tensor_to_f64(&mu_t)?;
    let sigma = tensor_to_f64(&sigma_t)?;

    let z_hat = decode_gaussian_segment(b_z, &mu, &sigma)?;
    let z_hat_tensor = Tensor::from_vec(
        z_hat.iter().map(|&x| x as f32).collect::<Vec<f32>>(),
        (1, c_z, zh, zw),
        &device,
    )?
    .to_dtype(dtype)?;
    let s_hat_t = model.g_s.forward(
        &channel_scale(&z_hat_tensor, &model.scaling.a_prime(ell)?)?,
        &dec_cond,
    )?;
    Ok(tensor_to_images(&s_hat_t)?.remove(0))
}

/// Builds the factorized-prior coding tables from the live weights.
pub fn build_prior_tables(model: &FullModel) -> Result<Vec<CdfTable>> {
    let snapshot: PriorSnapshot = model.prior.snapshot(&model.store)?;
    Ok(snapshot.build_tables()?)
}

/// Full deploy: relay side, destination side, and the bit-exactness check
/// between the two. Returns the output and the rate-distortion point.
#[allow(clippy::too_many_arguments)]
pub fn deploy_image(
    model: &FullModel,
    prior_tables: &[CdfTable],
    source: &ImageTensor,
    state: &ChannelState,
    backhaul_rate: f64,
    noise_seed: u64,
    noise_tag: u64,
) -> Result<(DeployOutput, hdjscc_core::config::RdPoint)> {
    let out = relay_deploy(
        model,
        prior_tables,
        source,
        state,
        backhaul_rate,
        noise_seed,
        noise_tag,
    )?;
    let decoded = destination_decode(model, prior_tables, &out.container)?;
    if decoded.data() != out.s_hat.data() {
        return Err(PipelineError::CorruptedStream(
            "destination reconstruction differs from the relay-side prediction".into(),
        ));
    }
    let point = hdjscc_core::config::RdPoint {
        bpp: out.bpp_coded,
        psnr_db: psnr(source, &decoded)?,
        ssim: ssim(source, &decoded)?,
        lambda: model.cfg.lambda(state.ell)?,
        eta_db: hdjscc_core::channel::linear_to_db(state.eta),
        k_prime: out.k_prime as f64,
    };
    Ok((out, point))
}

/// Convenience state builder for AWGN deployments.
pub fn awgn_state(eta_db: f64, ell: usize) -> ChannelState {
    ChannelState::awgn(db_to_linear(eta_db), ell)
}
