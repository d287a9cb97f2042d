//! The analog joint source-channel codec: encoder `f_s` mapping images to
//! power-constrained channel symbols and decoder `g_d` mapping equalized
//! observations back to images.
//!
//! Both are residual CNNs with two stride-2 stages; SA modules (and RA
//! modules right after them) modulate features channel-wise when the model
//! is SNR- or rate-adaptive. The flattened feature tensor is reinterpreted
//! as complex pairs: first half real parts, second half imaginary parts.

use candle_core::Tensor;
use candle_nn::{Conv2d, ConvTranspose2d, Module};
use hdjscc_core::config::{ExperimentConfig, DOWNSAMPLE_FACTOR};

use crate::adapt::AdaptModule;
use crate::model::CondInput;
use crate::nn::{conv2d, deconv2d_double, sigmoid, PRelu, ResidualBlock};
use crate::store::ParamStore;
use crate::{ModelError, Result};

/// Guard inside the power normalizer; keeps the gradient finite if an
/// untrained encoder emits a vanishing codeword.
const NORM_EPS: f64 = 1e-12;

/// Scales each batch row onto the unit average-power budget,
/// `x * min(1, sqrt(k)/|x|)` with `k = n/2` complex uses per row.
pub fn normalize_power_graph(x: &Tensor) -> Result<Tensor> {
    let (_b, n) = x.dims2()?;
    let k = (n / 2) as f64;
    let sum_sq = x.sqr()?.sum_keepdim(1)?; // [B, 1]
    let scale = ((sum_sq + NORM_EPS)?.recip()? * k)?.sqrt()?.clamp(0.0, 1.0)?;
    Ok(x.broadcast_mul(&scale)?)
}

struct AdaptPair {
    sa: Option<AdaptModule>,
    ra: Option<AdaptModule>,
}

impl AdaptPair {
    fn new(
        store: &mut ParamStore,
        site: &str,
        channels: usize,
        snr_adaptive: bool,
        rate_adaptive: bool,
        lambda_count: usize,
    ) -> Result<Self> {
        let sa = if snr_adaptive {
            Some(AdaptModule::new(
                store,
                &format!("sa_ra.{site}.sa"),
                channels,
                1,
            )?)
        } else {
            None
        };
        let ra = if rate_adaptive {
            Some(AdaptModule::new(
                store,
                &format!("sa_ra.{site}.ra"),
                channels,
                lambda_count,
            )?)
        } else {
            None
        };
        Ok(Self { sa, ra })
    }

    fn forward(&self, x: Tensor, cond: &CondInput) -> Result<Tensor> {
        let mut x = x;
        if let Some(sa) = &self.sa {
            x = sa.forward(&x, &cond.eta_std)?;
        }
        if let Some(ra) = &self.ra {
            x = ra.forward(&x, &cond.ell_onehot)?;
        }
        Ok(x)
    }
}

struct Stage {
    blocks: Vec<ResidualBlock>,
    adapt: AdaptPair,
}

impl Stage {
    fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        cfg: &ExperimentConfig,
    ) -> Result<Self> {
        let blocks = (0..cfg.jscc.n_residual_blocks)
            .map(|i| ResidualBlock::new(store, &format!("{name}.res{i}"), channels))
            .collect::<Result<Vec<_>>>()?;
        let adapt = AdaptPair::new(
            store,
            name,
            channels,
            cfg.snr_adaptive,
            cfg.rate_adaptive,
            cfg.lambda_count(),
        )?;
        Ok(Self { blocks, adapt })
    }

    fn forward(&self, mut x: Tensor, cond: &CondInput) -> Result<Tensor> {
        for b in &self.blocks {
            x = b.forward(&x)?;
        }
        self.adapt.forward(x, cond)
    }
}

pub struct JsccEncoder {
    head: Conv2d,
    head_act: PRelu,
    down1: Conv2d,
    down1_act: PRelu,
    stage1: Stage,
    down2: Conv2d,
    down2_act: PRelu,
    stage2: Stage,
    tail: Conv2d,
    c_out: usize,
}

impl JsccEncoder {
    pub fn new(store: &mut ParamStore, cfg: &ExperimentConfig) -> Result<Self> {
        let f = cfg.jscc.internal_channels;
        Ok(Self {
            head: conv2d(store, "f_s.head", 3, f, 3, 1, 1)?,
            head_act: PRelu::new(store, "f_s.head_act", f)?,
            down1: conv2d(store, "f_s.down1", f, f, 3, 2, 1)?,
            down1_act: PRelu::new(store, "f_s.down1_act", f)?,
            stage1: Stage::new(store, "f_s.stage1", f, cfg)?,
            down2: conv2d(store, "f_s.down2", f, f, 3, 2, 1)?,
            down2_act: PRelu::new(store, "f_s.down2_act", f)?,
            stage2: Stage::new(store, "f_s.stage2", f, cfg)?,
            tail: conv2d(store, "f_s.tail", f, cfg.jscc.c_out, 3, 1, 1)?,
            c_out: cfg.jscc.c_out,
        })
    }

    /// Maps `[B, 3, H, W]` images to power-normalized codewords `[B, 2k]`
    /// (real view). `H` and `W` must be divisible by 16 so the downstream
    /// hyper-latent path stays well-formed.
    pub fn forward(&self, s: &Tensor, cond: &CondInput) -> Result<Tensor> {
        let (b, _c, h, w) = s.dims4()?;
        if h % 16 != 0 || w % 16 != 0 {
            return Err(ModelError::Shape(format!(
                "image dimensions {h}x{w} must be divisible by 16"
            )));
        }
        let x = self.head_act.forward(&self.head.forward(s)?)?;
        let x = self.down1_act.forward(&self.down1.forward(&x)?)?;
        let x = self.stage1.forward(x, cond)?;
        let x = self.down2_act.forward(&self.down2.forward(&x)?)?;
        let x = self.stage2.forward(x, cond)?;
        let x = self.tail.forward(&x)?;
        let n = self.c_out * (h / DOWNSAMPLE_FACTOR) * (w / DOWNSAMPLE_FACTOR);
        normalize_power_graph(&x.reshape((b, n))?)
    }
}

pub struct JsccDecoder {
    head: Conv2d,
    head_act: PRelu,
    stage1: Stage,
    up1: ConvTranspose2d,
    up1_act: PRelu,
    stage2: Stage,
    up2: ConvTranspose2d,
    up2_act: PRelu,
    tail: Conv2d,
    c_out: usize,
}

impl JsccDecoder {
    pub fn new(store: &mut ParamStore, cfg: &ExperimentConfig) -> Result<Self> {
        let f = cfg.jscc.internal_channels;
        Ok(Self {
            head: conv2d(store, "g_d.head", cfg.jscc.c_out, f, 3, 1, 1)?,
            head_act: PRelu::new(store, "g_d.head_act", f)?,
            stage1: Stage::new(store, "g_d.stage1", f, cfg)?,
            up1: deconv2d_double(store, "g_d.up1", f, f)?,
            up1_act: PRelu::new(store, "g_d.up1_act", f)?,
            stage2: Stage::new(store, "g_d.stage2", f, cfg)?,
            up2: deconv2d_double(store, "g_d.up2", f, f)?,
            up2_act: PRelu::new(store, "g_d.up2_act", f)?,
            tail: conv2d(store, "g_d.tail", f, 3, 3, 1, 1)?,
            c_out: cfg.jscc.c_out,
        })
    }

    /// Maps equalized observations `[B, 2k]` back to `[B, 3, H, W]` images
    /// with values in `[0, 1]`.
    pub fn forward(&self, x_hat: &Tensor, cond: &CondInput, h: usize, w: usize) -> Result<Tensor> {
        let (b, n) = x_hat.dims2()?;
        let (hq, wq) = (h / DOWNSAMPLE_FACTOR, w / DOWNSAMPLE_FACTOR);
        if n != self.c_out * hq * wq {
            return Err(ModelError::Shape(format!(
                "codeword length {n} does not match {}x{hq}x{wq}",
                self.c_out
            )));
        }
        let x = x_hat.reshape((b, self.c_out, hq, wq))?;
        let x = self.head_act.forward(&self.head.forward(&x)?)?;
        let x = self.stage1.forward(x, cond)?;
        let x = self.up1_act.forward(&self.up1.forward(&x)?)?;
        let x = self.stage2.forward(x, cond)?;
        let x = self.up2_act.forward(&self.up2.forward(&x)?)?;
        sigmoid(&self.tail.forward(&x)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};
    use hdjscc_core::config::ExperimentConfig;

    fn tiny_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::desk_32();
        cfg.jscc.internal_channels = 8;
        cfg.jscc.n_residual_blocks = 1;
        cfg.snr_adaptive = true;
        cfg.rate_adaptive = true;
        cfg.eta_min_db = 1.0;
        cfg.eta_max_db = 9.0;
        cfg
    }

    fn cond(cfg: &ExperimentConfig, b: usize) -> CondInput {
        CondInput::new(cfg, &vec![5.0; b], 1, DType::F32, &Device::Cpu).unwrap()
    }

    #[test]
    fn encoder_emits_768_uses_for_32x32_and_meets_power_budget() {
        let cfg = tiny_cfg();
        let mut store = ParamStore::new(DType::F32, 0);
        let enc = JsccEncoder::new(&mut store, &cfg).unwrap();
        let s = Tensor::rand(0f32, 1f32, (2, 3, 32, 32), &Device::Cpu).unwrap();
        let x = enc.forward(&s, &cond(&cfg, 2)).unwrap();
        assert_eq!(x.dims(), [2, 1536]); // k = 768 complex uses
        let v = x.to_vec2::<f32>().unwrap();
        for row in v {
            let p: f32 = row.iter().map(|a| a * a).sum::<f32>() / 768.0;
            assert!(p <= 1.0 + 1e-5, "avg power {p}");
        }
    }

    #[test]
    fn celeba_geometry_gives_3072_uses() {
        let mut cfg = tiny_cfg();
        cfg.jscc.c_out = 6;
        let mut store = ParamStore::new(DType::F32, 0);
        let enc = JsccEncoder::new(&mut store, &cfg).unwrap();
        let s = Tensor::rand(0f32, 1f32, (1, 3, 128, 128), &Device::Cpu).unwrap();
        let x = enc.forward(&s, &cond(&cfg, 1)).unwrap();
        assert_eq!(x.dims(), [1, 6144]); // k = 3072
    }

    #[test]
    fn encoder_rejects_bad_dimensions() {
        let cfg = tiny_cfg();
        let mut store = ParamStore::new(DType::F32, 0);
        let enc = JsccEncoder::new(&mut store, &cfg).unwrap();
        let s = Tensor::rand(0f32, 1f32, (1, 3, 24, 24), &Device::Cpu).unwrap();
        assert!(enc.forward(&s, &cond(&cfg, 1)).is_err());
    }

    #[test]
    fn decoder_round_trips_shape_and_stays_in_unit_range() {
        let cfg = tiny_cfg();
        let mut store = ParamStore::new(DType::F32, 0);
        let enc = JsccEncoder::new(&mut store, &cfg).unwrap();
        let dec = JsccDecoder::new(&mut store, &cfg).unwrap();
        let s = Tensor::rand(0f32, 1f32, (2, 3, 32, 32), &Device::Cpu).unwrap();
        let c = cond(&cfg, 2);
        let x = enc.forward(&s, &c).unwrap();
        let out = dec.forward(&x, &c, 32, 32).unwrap();
        assert_eq!(out.dims(), [2, 3, 32, 32]);
        for v in out.flatten_all().unwrap().to_vec1::<f32>().unwrap() {
            assert!((0.0..=1.0).contains(&v));
        }
        // Wrong length is a shape error.
        let short = Tensor::zeros((2, 100), DType::F32, &Device::Cpu).unwrap();
        assert!(dec.forward(&short, &c, 32, 32).is_err());
    }

    #[test]
    fn all_zero_signal_decodes_finite() {
        let cfg = tiny_cfg();
        let mut store = ParamStore::new(DType::F32, 0);
        let dec = JsccDecoder::new(&mut store, &cfg).unwrap();
        let x = Tensor::zeros((1, 1536), DType::F32, &Device::Cpu).unwrap();
        let out = dec.forward(&x, &cond(&cfg, 1), 32, 32).unwrap();
        for v in out.flatten_all().unwrap().to_vec1::<f32>().unwrap() {
            assert!(v.is_finite());
        }
    }

    #[test]
    fn distinct_eta_changes_the_codeword_when_snr_adaptive() {
        let cfg = tiny_cfg();
        let mut store = ParamStore::new(DType::F32, 0);
        let enc = JsccEncoder::new(&mut store, &cfg).unwrap();
        let s = Tensor::rand(0f32, 1f32, (1, 3, 32, 32), &Device::Cpu).unwrap();
        let c1 = CondInput::new(&cfg, &[1.0], 1, DType::F32, &Device::Cpu).unwrap();
        let c9 = CondInput::new(&cfg, &[9.0], 1, DType::F32, &Device::Cpu).unwrap();
        let a = enc.forward(&s, &c1).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let b = enc.forward(&s, &c9).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn distinct_ell_changes_the_codeword_when_rate_adaptive() {
        let cfg = tiny_cfg();
        let mut store = ParamStore::new(DType::F32, 0);
        let enc = JsccEncoder::new(&mut store, &cfg).unwrap();
        let s = Tensor::rand(0f32, 1f32, (1, 3, 32, 32), &Device::Cpu).unwrap();
        let c1 = CondInput::new(&cfg, &[5.0], 1, DType::F32, &Device::Cpu).unwrap();
        let c5 = CondInput::new(&cfg, &[5.0], 5, DType::F32, &Device::Cpu).unwrap();
        let a = enc.forward(&s, &c1).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let b = enc.forward(&s, &c5).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn normalize_power_graph_matches_reference() {
        // Over-budget rows scale to exactly unit power, under-budget rows
        // pass through.
        let x = Tensor::from_vec(
            vec![2.0f32, 2.0, 2.0, 2.0, 0.1, 0.1, 0.0, 0.0],
            (2, 4),
            &Device::Cpu,
        )
        .unwrap();
        let y = normalize_power_graph(&x).unwrap().to_vec2::<f32>().unwrap();
        // Row 0 is 2 complex uses of power 8 each; scaling lands on unit
        // average power, so every component becomes 1/sqrt(2).
        let expect = 1.0 / 2f32.sqrt();
        for v in &y[0] {
            assert!((v - expect).abs() < 1e-5, "{v} vs {expect}");
        }
        assert!((y[1][0] - 0.1).abs() < 1e-6);
        assert!((y[1][1] - 0.1).abs() < 1e-6);
    }
}
