//! The full trainable system and its conditioning inputs.

use candle_core::{DType, Device, Tensor};
use hdjscc_core::config::ExperimentConfig;

use crate::adapt::one_hot_ell;
use crate::compressor::{
    AnalysisTransform, HyperAnalysis, HyperSynthesis, ScalingFactors, SynthesisTransform,
};
use crate::jscc::{JsccDecoder, JsccEncoder};
use crate::prior::FactorizedPrior;
use crate::store::ParamStore;
use crate::Result;

/// Parameter prefixes making up the analog codec (frozen when the model is
/// initialized from a pretrained codec).
pub const JSCC_PREFIXES: &[&str] = &["f_s.", "g_d.", "sa_ra.f_s.", "sa_ra.g_d."];

/// Conditioning carried through a forward pass: per-item SNR (standardized
/// dB for the SA modules) and the shared rate index (one-hot for RA).
pub struct CondInput {
    pub eta_db: Vec<f64>,
    pub ell: usize,
    pub eta_std: Tensor,
    pub ell_onehot: Tensor,
}

impl CondInput {
    pub fn new(
        cfg: &ExperimentConfig,
        eta_db: &[f64],
        ell: usize,
        dtype: DType,
        device: &Device,
    ) -> Result<Self> {
        let b = eta_db.len();
        let std: Vec<f32> = eta_db
            .iter()
            .map(|&e| cfg.standardize_eta_db(e) as f32)
            .collect();
        let eta_std = Tensor::from_vec(std, (b, 1), device)?.to_dtype(dtype)?;
        let ell_onehot = one_hot_ell(ell, cfg.lambda_count(), b, dtype, device)?;
        Ok(Self {
            eta_db: eta_db.to_vec(),
            ell,
            eta_std,
            ell_onehot,
        })
    }
}

/// Every trainable module of the system, sharing one parameter store.
pub struct FullModel {
    pub cfg: ExperimentConfig,
    pub store: ParamStore,
    pub f_s: JsccEncoder,
    pub g_d: JsccDecoder,
    pub g_a: AnalysisTransform,
    pub h_a: HyperAnalysis,
    pub g_s: SynthesisTransform,
    pub h_s: HyperSynthesis,
    pub prior: FactorizedPrior,
    pub scaling: ScalingFactors,
}

impl FullModel {
    pub fn new(cfg: &ExperimentConfig, dtype: DType, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new(dtype, seed);
        let f_s = JsccEncoder::new(&mut store, cfg)?;
        let g_d = JsccDecoder::new(&mut store, cfg)?;
        let g_a = AnalysisTransform::new(&mut store, cfg)?;
        let h_a = HyperAnalysis::new(&mut store, cfg)?;
        let g_s = SynthesisTransform::new(&mut store, cfg)?;
        let h_s = HyperSynthesis::new(&mut store, cfg)?;
        let prior = FactorizedPrior::new(
            &mut store,
            "prior",
            cfg.compressor.c_v,
            cfg.compressor.prior_stages,
            cfg.compressor.prior_init_scale,
        )?;
        let scaling = ScalingFactors::new(&mut store, cfg)?;
        Ok(Self {
            cfg: cfg.clone(),
            store,
            f_s,
            g_d,
            g_a,
            h_a,
            g_s,
            h_s,
            prior,
            scaling,
        })
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn device(&self) -> Device {
        self.store.device().clone()
    }

    pub fn cond(&self, eta_db: &[f64], ell: usize) -> Result<CondInput> {
        CondInput::new(&self.cfg, eta_db, ell, self.dtype(), self.store.device())
    }

    /// Copies the analog codec weights from another model and reports how
    /// many tensors moved; freezing is handled by the training loop
    /// excluding [`JSCC_PREFIXES`] from the optimizer.
    pub fn load_jscc_from(&mut self, pretrained: &FullModel) -> Result<usize> {
        self.store.copy_prefix_from(&pretrained.store, JSCC_PREFIXES)
    }

    pub fn jscc_weights_hash(&self) -> u64 {
        self.store.weights_hash(JSCC_PREFIXES)
    }
}
