//! Rate-distortion evaluation over `(lambda, eta)` grids, codeword
//! distribution diagnostics, and the CSV table format.

use hdjscc_core::channel::{db_to_linear, sample_rayleigh, ChannelState};
use hdjscc_core::config::RdPoint;
use hdjscc_core::data::{DatasetStore, Split};
use hdjscc_core::metrics::{empirical_codeword_distribution, kl_divergence, EmpiricalHistogram};
use hdjscc_core::rng::{purpose, stream};
use hdjscc_core::ComplexSignal;
use hdjscc_entropy::CdfTable;
use hdjscc_models::channel_graph::ChannelKind;
use hdjscc_models::FullModel;
use serde::{Deserialize, Serialize};

use crate::batching::image_to_tensor;
use crate::deploy::deploy_image;
use crate::{PipelineError, Result};

/// PSNR cap applied when averaging over images; keeps an exact
/// reconstruction from poisoning the mean.
pub const PSNR_CAP_DB: f64 = 100.0;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RdRow {
    pub dataset: String,
    pub model_id: String,
    pub lambda: f64,
    pub eta_db: f64,
    pub channel: String,
    pub bpp: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    pub k_prime: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Default)]
pub struct RdTable {
    rows: Vec<RdRow>,
}

impl RdTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a row; `(lambda, eta_db, model_id)` keys must be unique.
    pub fn push(&mut self, row: RdRow) -> Result<()> {
        if self
            .rows
            .iter()
            .any(|r| r.lambda == row.lambda && r.eta_db == row.eta_db && r.model_id == row.model_id)
        {
            return Err(PipelineError::Config(format!(
                "duplicate rate-distortion key (lambda {}, eta {} dB, model {})",
                row.lambda, row.eta_db, row.model_id
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[RdRow] {
        &self.rows
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("dataset,model_id,lambda,eta_db,channel,bpp,psnr_db,ssim,k_prime,seed\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{:.6},{:.4},{:.6},{:.1},{}\n",
                r.dataset,
                r.model_id,
                r.lambda,
                r.eta_db,
                r.channel,
                r.bpp,
                r.psnr_db,
                r.ssim,
                r.k_prime,
                r.seed
            ));
        }
        out
    }
}

/// Draws a deployment channel state for one image index.
pub fn draw_state(kind: ChannelKind, eta_db: f64, ell: usize, seed: u64, tag: u64) -> ChannelState {
    let eta = db_to_linear(eta_db);
    match kind {
        ChannelKind::Awgn => ChannelState::awgn(eta, ell),
        ChannelKind::RayleighCsit => {
            let mut rng = stream(seed, purpose::FADING, &[tag]);
            ChannelState {
                eta,
                h: sample_rayleigh(&mut rng),
                csit: true,
                ell,
            }
        }
        ChannelKind::RayleighCsir => {
            let mut rng = stream(seed, purpose::FADING, &[tag]);
            ChannelState {
                eta,
                h: sample_rayleigh(&mut rng),
                csit: false,
                ell,
            }
        }
    }
}

/// Deploys the model over test images and averages the outcome into one
/// rate-distortion point. Every image is actually entropy-coded, decoded
/// at the destination and verified bit-exact against the relay prediction.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_deployed(
    model: &FullModel,
    prior_tables: &[CdfTable],
    store: &DatasetStore,
    split: Split,
    n_images: usize,
    eta_db: f64,
    ell: usize,
    seed: u64,
) -> Result<RdPoint> {
    let kind = ChannelKind::from_name(&model.cfg.channel)?;
    let n = n_images.min(store.len(split));
    if n == 0 {
        return Err(PipelineError::Config("empty evaluation split".into()));
    }
    let mut bpp = 0.0;
    let mut psnr_acc = 0.0;
    let mut ssim_acc = 0.0;
    let mut k_prime = 0.0;
    for i in 0..n {
        let img = store.get(split, i)?;
        let state = draw_state(kind, eta_db, ell, seed, i as u64);
        let (out, point) = deploy_image(
            model,
            prior_tables,
            &img,
            &state,
            model.cfg.backhaul_rate,
            seed,
            i as u64,
        )?;
        bpp += out.bpp_coded;
        psnr_acc += point.psnr_db.min(PSNR_CAP_DB);
        ssim_acc += point.ssim;
        k_prime += out.k_prime as f64;
    }
    let nf = n as f64;
    Ok(RdPoint {
        bpp: bpp / nf,
        psnr_db: psnr_acc / nf,
        ssim: ssim_acc / nf,
        lambda: model.cfg.lambda(ell)?,
        eta_db,
        k_prime: k_prime / nf,
    })
}

/// Encoder outputs for `n` images at a fixed conditioning SNR, as
/// power-constrained complex signals (no channel involved).
pub fn collect_codewords(
    model: &FullModel,
    store: &DatasetStore,
    split: Split,
    n: usize,
    eta_db: f64,
    ell: usize,
) -> Result<Vec<ComplexSignal>> {
    let n = n.min(store.len(split));
    let mut signals = Vec::with_capacity(n);
    for i in 0..n {
        let img = store.get(split, i)?;
        let s = image_to_tensor(&img, model.dtype(), model.store.device())?;
        let cond = model.cond(&[eta_db], ell)?;
        let x = model.f_s.forward(&s, &cond)?;
        let reals: Vec<f64> = x
            .to_dtype(candle_core::DType::F64)?
            .flatten_all()?
            .to_vec1::<f64>()?;
        let samples = ComplexSignal::from_real_view(&reals)?;
        signals.push(ComplexSignal::new(samples)?);
    }
    Ok(signals)
}

/// Histogram of normalized codeword elements at one SNR.
pub fn codeword_histogram(
    model: &FullModel,
    store: &DatasetStore,
    split: Split,
    n: usize,
    eta_db: f64,
    ell: usize,
) -> Result<EmpiricalHistogram> {
    Ok(empirical_codeword_distribution(&collect_codewords(
        model, store, split, n, eta_db, ell,
    )?)?)
}

/// KL divergence (bits) between the codeword distributions at two SNRs;
/// the separation diagnostic for initialization quality.
#[allow(clippy::too_many_arguments)]
pub fn codeword_separation_kl(
    model: &FullModel,
    store: &DatasetStore,
    split: Split,
    n: usize,
    lo_db: f64,
    hi_db: f64,
    ell: usize,
) -> Result<f64> {
    let p = codeword_histogram(model, store, split, n, lo_db, ell)?;
    let q = codeword_histogram(model, store, split, n, hi_db, ell)?;
    Ok(kl_divergence(&p, &q))
}
