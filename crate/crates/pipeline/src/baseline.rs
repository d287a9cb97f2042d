//! Comparison systems: the idealized fully digital chain with its cliff
//! behavior, pluggable source codecs behind a named registry, and the
//! naive vector-quantization relay.

use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Stdio};

use hdjscc_core::channel::{db_to_linear, ChannelState};
use hdjscc_core::data::{DatasetStore, ImageTensor, Split};
use hdjscc_core::metrics::psnr;
use hdjscc_core::rng::{purpose, stream};
use hdjscc_core::vq::{vq_forward, VqCodebook};
use hdjscc_core::signal::ComplexSignal;
use hdjscc_entropy::CdfTable;
use hdjscc_models::channel_graph::{standard_normal_tensor, BatchChannel, ChannelKind};
use hdjscc_models::FullModel;
use serde::{Deserialize, Serialize};

use crate::batching::{image_to_tensor, tensor_to_images};
use crate::deploy::compress_reconstruct;
use crate::{PipelineError, Result};

/// One coded-modulation option: spectral efficiency is `rate * order` bits
/// per channel use, usable when the SNR clears its threshold.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct McsEntry {
    pub code_rate: f64,
    /// Modulation order in bits per symbol (1 = BPSK, 2 = 4QAM, ...).
    pub modulation_order: f64,
    /// Threshold SNR for block error rate 1e-3 under this entry.
    pub min_snr_db: f64,
}

impl McsEntry {
    pub fn spectral_efficiency(&self) -> f64 {
        self.code_rate * self.modulation_order
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct McsTable {
    pub entries: Vec<McsEntry>,
}

impl McsTable {
    pub fn parse_toml(text: &str) -> Result<Self> {
        let t: McsTable = toml::from_str(text)
            .map_err(|e| PipelineError::Baseline(format!("parsing MCS table: {e}")))?;
        if t.entries.is_empty() {
            return Err(PipelineError::Baseline("MCS table is empty".into()));
        }
        for e in &t.entries {
            if e.spectral_efficiency() <= 0.0 {
                return Err(PipelineError::Baseline(format!(
                    "non-positive spectral efficiency in entry {e:?}"
                )));
            }
        }
        Ok(t)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("static schema serializes")
    }

    /// Threshold SNRs approximate textbook waterfalls at BLER 1e-3.
    pub fn default_approximate() -> Self {
        let mk = |code_rate, modulation_order, min_snr_db| McsEntry {
            code_rate,
            modulation_order,
            min_snr_db,
        };
        Self {
            entries: vec![
                mk(0.5, 1.0, -1.0),
                mk(0.5, 2.0, 2.0),
                mk(0.75, 2.0, 4.5),
                mk(0.5, 4.0, 7.0),
                mk(0.75, 4.0, 10.5),
                mk(0.833, 6.0, 16.0),
            ],
        }
    }

    /// Highest spectral efficiency whose threshold clears the SNR.
    pub fn select(&self, eta_db: f64) -> Option<&McsEntry> {
        self.entries
            .iter()
            .filter(|e| e.min_snr_db <= eta_db)
            .max_by(|a, b| {
                a.spectral_efficiency()
                    .partial_cmp(&b.spectral_efficiency())
                    .unwrap()
            })
    }
}

pub struct SourceCodecOutput {
    pub bits: u64,
    pub recon: ImageTensor,
}

/// A pluggable still-image compressor with a quality knob; implementations
/// report the best reconstruction that fits the bit budget, or `None`.
pub trait SourceCodec {
    fn name(&self) -> &str;
    fn compress_to_fit(&self, img: &ImageTensor, max_bits: u64) -> Result<Option<SourceCodecOutput>>;
}

/// The in-repo learned compressor in pure-compression mode: tries each
/// trained operating point from heaviest to lightest until one fits.
pub struct LearnedCodec {
    pub models: Vec<(FullModel, Vec<CdfTable>)>,
}

impl SourceCodec for LearnedCodec {
    fn name(&self) -> &str {
        "learned"
    }

    fn compress_to_fit(&self, img: &ImageTensor, max_bits: u64) -> Result<Option<SourceCodecOutput>> {
        let mut points: Vec<(f64, usize, usize)> = Vec::new();
        for (mi, (model, _)) in self.models.iter().enumerate() {
            for ell in 1..=model.cfg.lambda_count() {
                points.push((model.cfg.lambda(ell)?, mi, ell));
            }
        }
        points.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        for (_lambda, mi, ell) in points {
            let (model, tables) = &self.models[mi];
            let mid_eta = 0.5 * (model.cfg.eta_min_db + model.cfg.eta_max_db);
            let t = image_to_tensor(img, model.dtype(), model.store.device())?;
            let c = compress_reconstruct(model, tables, &t, mid_eta, ell)?;
            let bits = 8 * (c.b_v.len() + c.b_z.len()) as u64;
            if bits <= max_bits {
                return Ok(Some(SourceCodecOutput {
                    bits,
                    recon: c.s_hat,
                }));
            }
        }
        Ok(None)
    }
}

/// An external compressor pair driven over stdin/stdout.
///
/// Contract: the encode command receives the image as `HDJB` + H:u16 +
/// W:u16 (big-endian) + RGB24 rows on stdin and writes the compressed
/// bytes to stdout; `{q}` in either command expands to the quality level.
/// The decode command inverts it. Quality levels are tried from the last
/// (heaviest) to the first until the output fits the budget.
pub struct ExternalCodec {
    pub encode_cmd: Vec<String>,
    pub decode_cmd: Vec<String>,
    pub qualities: Vec<u32>,
}

pub const EXTERNAL_IMAGE_MAGIC: &[u8; 4] = b"HDJB";

pub fn image_to_wire(img: &ImageTensor) -> Vec<u8> {
    let (c, h, w) = img.shape();
    assert_eq!(c, 3);
    let mut out = Vec::with_capacity(8 + 3 * h * w);
    out.extend_from_slice(EXTERNAL_IMAGE_MAGIC);
    out.extend_from_slice(&(h as u16).to_be_bytes());
    out.extend_from_slice(&(w as u16).to_be_bytes());
    let bytes = img.to_u8();
    // CHW to interleaved RGB rows.
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                out.push(bytes[ch * h * w + y * w + x]);
            }
        }
    }
    out
}

pub fn image_from_wire(bytes: &[u8]) -> Result<ImageTensor> {
    if bytes.len() < 8 || &bytes[0..4] != EXTERNAL_IMAGE_MAGIC {
        return Err(PipelineError::Baseline("bad external image framing".into()));
    }
    let h = u16::from_be_bytes([bytes[4], bytes[5]]) as usize;
    let w = u16::from_be_bytes([bytes[6], bytes[7]]) as usize;
    if bytes.len() != 8 + 3 * h * w {
        return Err(PipelineError::Baseline(format!(
            "external image payload {} bytes, expected {}",
            bytes.len() - 8,
            3 * h * w
        )));
    }
    let mut chw = vec![0u8; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                chw[ch * h * w + y * w + x] = bytes[8 + (y * w + x) * 3 + ch];
            }
        }
    }
    Ok(ImageTensor::from_u8(3, h, w, &chw)?)
}

fn run_filter(cmd: &[String], quality: u32, input: &[u8]) -> Result<Vec<u8>> {
    if cmd.is_empty() {
        return Err(PipelineError::Baseline("empty codec command".into()));
    }
    let expand = |s: &String| s.replace("{q}", &quality.to_string());
    let mut child = Command::new(expand(&cmd[0]))
        .args(cmd[1..].iter().map(expand))
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| PipelineError::Baseline(format!("spawning codec: {e}")))?;
    child
        .stdin
        .as_mut()
        .expect("piped stdin")
        .write_all(input)?;
    let out = child.wait_with_output()?;
    if !out.status.success() {
        return Err(PipelineError::Baseline(format!(
            "codec exited with {:?}",
            out.status.code()
        )));
    }
    Ok(out.stdout)
}

impl SourceCodec for ExternalCodec {
    fn name(&self) -> &str {
        "external"
    }

    fn compress_to_fit(&self, img: &ImageTensor, max_bits: u64) -> Result<Option<SourceCodecOutput>> {
        let wire = image_to_wire(img);
        for &q in self.qualities.iter().rev() {
            let coded = run_filter(&self.encode_cmd, q, &wire)?;
            let bits = 8 * coded.len() as u64;
            if bits <= max_bits {
                let decoded = run_filter(&self.decode_cmd, q, &coded)?;
                return Ok(Some(SourceCodecOutput {
                    bits,
                    recon: image_from_wire(&decoded)?,
                }));
            }
        }
        Ok(None)
    }
}

/// Source codec registry: `learned` backed by checkpoint paths, or
/// `external:<encode_cmd>|<decode_cmd>[|q1,q2,...]` with shell-free
/// whitespace-split commands.
pub fn create_source_codec(spec: &str, learned: Option<LearnedCodec>) -> Result<Box<dyn SourceCodec>> {
    if spec == "learned" {
        return learned
            .map(|c| Box::new(c) as Box<dyn SourceCodec>)
            .ok_or_else(|| {
                PipelineError::Baseline("learned codec requested but no checkpoints given".into())
            });
    }
    if let Some(rest) = spec.strip_prefix("external:") {
        let parts: Vec<&str> = rest.split('|').collect();
        if parts.len() < 2 {
            return Err(PipelineError::Baseline(
                "external codec spec needs encode and decode commands".into(),
            ));
        }
        let split = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
        let qualities = if parts.len() > 2 {
            parts[2]
                .split(',')
                .map(|q| {
                    q.trim().parse::<u32>().map_err(|e| {
                        PipelineError::Baseline(format!("bad quality '{q}': {e}"))
                    })
                })
                .collect::<Result<Vec<u32>>>()?
        } else {
            (1..=9).collect()
        };
        return Ok(Box::new(ExternalCodec {
            encode_cmd: split(parts[0]),
            decode_cmd: split(parts[1]),
            qualities,
        }));
    }
    Err(PipelineError::Baseline(format!(
        "unknown source codec '{spec}' (available: learned, external:...)"
    )))
}

pub struct DigitalOutcome {
    pub success: bool,
    pub bits: u64,
    pub recon: ImageTensor,
    pub spectral_efficiency: f64,
}

/// The idealized fully digital chain: pick the best coded modulation for
/// the design SNR, budget `k * efficiency` bits for the source codec, and
/// collapse to the dataset-mean reconstruction when the actual SNR falls
/// below the entry's threshold or nothing fits (the cliff).
pub fn digital_baseline(
    img: &ImageTensor,
    eta_db: f64,
    design_eta_db: f64,
    mcs: &McsTable,
    codec: &dyn SourceCodec,
    k: usize,
    mean_image: &ImageTensor,
) -> Result<DigitalOutcome> {
    let outage = |eff: f64| DigitalOutcome {
        success: false,
        bits: 0,
        recon: mean_image.clone(),
        spectral_efficiency: eff,
    };
    let entry = match mcs.select(design_eta_db) {
        Some(e) => e,
        None => return Ok(outage(0.0)),
    };
    let eff = entry.spectral_efficiency();
    if eta_db < entry.min_snr_db {
        return Ok(outage(eff));
    }
    let budget = (k as f64 * eff).floor() as u64;
    match codec.compress_to_fit(img, budget)? {
        Some(out) => Ok(DigitalOutcome {
            success: true,
            bits: out.bits,
            recon: out.recon,
            spectral_efficiency: eff,
        }),
        None => Ok(outage(eff)),
    }
}

/// Received-signal corpus for codebook training: real views of `y_1` under
/// the model's channel at the given SNR.
#[allow(clippy::too_many_arguments)]
pub fn collect_received_signals(
    model: &FullModel,
    store: &DatasetStore,
    split: Split,
    n: usize,
    eta_db: f64,
    ell: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let kind = ChannelKind::from_name(&model.cfg.channel)?;
    let n = n.min(store.len(split));
    let mut out = Vec::new();
    for i in 0..n {
        let y = received_signal(model, &store.get(split, i)?, kind, eta_db, ell, seed, i as u64)?;
        out.extend(y.iter().map(|c| c.re));
        out.extend(y.iter().map(|c| c.im));
    }
    Ok(out)
}

fn received_signal(
    model: &FullModel,
    img: &ImageTensor,
    kind: ChannelKind,
    eta_db: f64,
    ell: usize,
    seed: u64,
    tag: u64,
) -> Result<Vec<num_complex::Complex64>> {
    let eta = db_to_linear(eta_db);
    let state = match kind {
        ChannelKind::Awgn => ChannelState::awgn(eta, ell),
        _ => {
            let mut rng = stream(seed, purpose::FADING, &[tag]);
            ChannelState {
                eta,
                h: hdjscc_core::channel::sample_rayleigh(&mut rng),
                csit: kind == ChannelKind::RayleighCsit,
                ell,
            }
        }
    };
    let s = image_to_tensor(img, model.dtype(), model.store.device())?;
    let bc = BatchChannel {
        kind,
        eta: state.eta,
        h: vec![state.h],
    };
    let enc_cond = model.cond(&bc.encoder_eta_db(), ell)?;
    let x = model.f_s.forward(&s, &enc_cond)?;
    let mut rng = stream(seed, purpose::CHANNEL_NOISE, &[tag]);
    let noise = standard_normal_tensor(&mut rng, x.dims(), model.dtype(), model.store.device())?;
    let y = bc.propagate(&x, &noise)?;
    let reals: Vec<f64> = y
        .to_dtype(candle_core::DType::F64)?
        .flatten_all()?
        .to_vec1::<f64>()?;
    // Received signals carry channel noise and are not bound by the
    // transmit power budget, so they stay plain sample vectors.
    Ok(ComplexSignal::from_real_view(&reals)?)
}

/// PSNR of the naive quantization relay: quantize the received signal with
/// the codebook, hand the dequantized signal to the analog decoder.
#[allow(clippy::too_many_arguments)]
pub fn vq_baseline_point(
    model: &FullModel,
    codebook: &VqCodebook,
    store: &DatasetStore,
    split: Split,
    n: usize,
    eta_db: f64,
    ell: usize,
    seed: u64,
) -> Result<(f64, f64, u64)> {
    let kind = ChannelKind::from_name(&model.cfg.channel)?;
    let (_c, h, w) = store.image_shape();
    let n = n.min(store.len(split));
    let mut psnr_acc = 0.0;
    let mut bits_total = 0u64;
    for i in 0..n {
        let img = store.get(split, i)?;
        let y = received_signal(model, &img, kind, eta_db, ell, seed, i as u64)?;
        let (_packed, bits, y_hat) = vq_forward(&y, codebook)?;
        bits_total += bits as u64;
        let mut reals = Vec::with_capacity(2 * y_hat.len());
        reals.extend(y_hat.iter().map(|c| c.re as f32));
        reals.extend(y_hat.iter().map(|c| c.im as f32));
        let t = candle_core::Tensor::from_vec(reals, (1, 2 * y_hat.len()), model.store.device())?
            .to_dtype(model.dtype())?;
        let cond = model.cond(&[eta_db], ell)?;
        let s_hat_t = model.g_d.forward(&t, &cond, h, w)?;
        let s_hat = tensor_to_images(&s_hat_t)?.remove(0);
        psnr_acc += psnr(&img, &s_hat)?.min(crate::eval::PSNR_CAP_DB);
    }
    let bpp = bits_total as f64 / (n as f64 * (h * w) as f64);
    Ok((psnr_acc / n as f64, bpp, bits_total / n as u64))
}

/// Default location for the MCS table config shipped with experiments.
pub fn default_mcs_path(root: &std::path::Path) -> PathBuf {
    root.join("mcs_table.toml")
}
