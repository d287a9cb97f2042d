//! Experiment configuration and rate-distortion records.

use serde::{Deserialize, Serialize};

use crate::{CoreError, Result};

/// Spatial downsampling of the analog codec and main latent; fixed by the
/// architecture (two stride-2 stages on each path).
pub const DOWNSAMPLE_FACTOR: usize = 4;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct JsccConfig {
    /// Output feature channels of the encoder tail (24 for 32x32 inputs,
    /// 6 for 128x128).
    pub c_out: usize,
    /// Width of the internal residual stages.
    pub internal_channels: usize,
    /// Residual blocks per stage.
    pub n_residual_blocks: usize,
}

impl JsccConfig {
    /// Complex channel uses for an `h x w` image: the flattened feature
    /// tensor reinterpreted as complex pairs.
    pub fn channel_uses(&self, h: usize, w: usize) -> Result<usize> {
        if h % 16 != 0 || w % 16 != 0 {
            return Err(CoreError::Shape(format!(
                "image dimensions {h}x{w} must be divisible by 16"
            )));
        }
        let reals = self.c_out * (h / DOWNSAMPLE_FACTOR) * (w / DOWNSAMPLE_FACTOR);
        if reals % 2 != 0 {
            return Err(CoreError::Shape(format!(
                "feature volume {reals} is odd and cannot form complex pairs"
            )));
        }
        Ok(reals / 2)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CompressorConfig {
    /// Width of the transform stages.
    pub internal_channels: usize,
    /// Channels of the main latent `z`.
    pub c_z: usize,
    /// Channels of the hyper-latent `v`.
    pub c_v: usize,
    /// Monotone stages of the factorized prior.
    pub prior_stages: usize,
    /// Scale of the logistic CDF the prior is initialized to.
    pub prior_init_scale: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    /// Multiplier applied when the validation loss plateaus.
    pub plateau_factor: f64,
    /// Epochs without improvement before the learning rate drops.
    pub plateau_epochs: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            plateau_factor: 0.8,
            plateau_epochs: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: String,
    /// Rate-distortion weights, ascending; `ell` indexes into this set.
    pub lambda_set: Vec<f64>,
    pub eta_min_db: f64,
    pub eta_max_db: f64,
    /// Channel strategy name (`awgn`, `rayleigh_csit`, `rayleigh_csir`).
    pub channel: String,
    /// Backhaul rate `R_N` in bits per channel use.
    pub backhaul_rate: f64,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Caps on images drawn from each split; `0` means the whole split.
    #[serde(default)]
    pub max_train_images: usize,
    #[serde(default)]
    pub max_val_images: usize,
    /// SNR conditioning (SA modules) in the codec and compressor.
    pub snr_adaptive: bool,
    /// Rate conditioning (RA modules) in the codec.
    pub rate_adaptive: bool,
    pub optimizer: OptimizerConfig,
    pub jscc: JsccConfig,
    pub compressor: CompressorConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_set.is_empty() {
            return Err(CoreError::Config("lambda set is empty".into()));
        }
        if !self.lambda_set.windows(2).all(|w| w[0] < w[1]) {
            return Err(CoreError::Config(
                "lambda set must be strictly ascending".into(),
            ));
        }
        if self.eta_min_db > self.eta_max_db {
            return Err(CoreError::Config(format!(
                "eta_min_db {} > eta_max_db {}",
                self.eta_min_db, self.eta_max_db
            )));
        }
        if !(self.backhaul_rate > 0.0) {
            return Err(CoreError::Config("backhaul rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(CoreError::Config("batch size must be positive".into()));
        }
        crate::channel::create_channel(&self.channel)?;
        Ok(())
    }

    /// Standardizes a dB SNR by the training range midpoint and half-width;
    /// degenerate ranges map to zero.
    pub fn standardize_eta_db(&self, eta_db: f64) -> f64 {
        let mid = 0.5 * (self.eta_min_db + self.eta_max_db);
        let half = 0.5 * (self.eta_max_db - self.eta_min_db);
        if half > 0.0 {
            (eta_db - mid) / half
        } else {
            0.0
        }
    }

    pub fn lambda_count(&self) -> usize {
        self.lambda_set.len()
    }

    /// The weight for a 1-based rate index.
    pub fn lambda(&self, ell: usize) -> Result<f64> {
        if ell == 0 || ell > self.lambda_set.len() {
            return Err(CoreError::Config(format!(
                "rate index {ell} outside [1, {}]",
                self.lambda_set.len()
            )));
        }
        Ok(self.lambda_set[ell - 1])
    }

    /// Paper-scale configuration for 32x32 sources.
    pub fn paper_cifar() -> Self {
        Self {
            dataset: "cifar10".into(),
            lambda_set: vec![200.0, 400.0, 800.0, 1600.0, 3200.0],
            eta_min_db: 1.0,
            eta_max_db: 9.0,
            channel: "awgn".into(),
            backhaul_rate: 2.0,
            seed: 0,
            epochs: 150,
            batch_size: 128,
            max_train_images: 0,
            max_val_images: 0,
            snr_adaptive: true,
            rate_adaptive: true,
            optimizer: OptimizerConfig::default(),
            jscc: JsccConfig {
                c_out: 24,
                internal_channels: 256,
                n_residual_blocks: 4,
            },
            compressor: CompressorConfig {
                internal_channels: 192,
                c_z: 256,
                c_v: 192,
                prior_stages: 4,
                prior_init_scale: 10.0,
            },
        }
    }

    /// Reduced-budget configuration sized for CPU acceptance runs.
    pub fn desk_32() -> Self {
        Self {
            dataset: "synthetic32".into(),
            lambda_set: vec![200.0, 400.0, 800.0, 1600.0, 3200.0],
            eta_min_db: 5.0,
            eta_max_db: 5.0,
            channel: "awgn".into(),
            backhaul_rate: 2.0,
            seed: 7,
            epochs: 12,
            batch_size: 32,
            max_train_images: 1024,
            max_val_images: 128,
            snr_adaptive: false,
            rate_adaptive: false,
            optimizer: OptimizerConfig {
                learning_rate: 1e-3,
                plateau_factor: 0.8,
                plateau_epochs: 3,
            },
            jscc: JsccConfig {
                c_out: 24,
                internal_channels: 32,
                n_residual_blocks: 2,
            },
            compressor: CompressorConfig {
                internal_channels: 48,
                c_z: 64,
                c_v: 32,
                prior_stages: 4,
                prior_init_scale: 10.0,
            },
        }
    }
}

/// One operating point on the rate-distortion plane.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RdPoint {
    pub bpp: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    pub lambda: f64,
    pub eta_db: f64,
    /// Expected backhaul latency in channel uses, `L_b / R_N`.
    pub k_prime: f64,
}

impl RdPoint {
    pub fn validate(&self) -> Result<()> {
        if self.bpp < 0.0 {
            return Err(CoreError::Config(format!("negative bpp {}", self.bpp)));
        }
        if !(0.0..=1.0).contains(&self.ssim) {
            return Err(CoreError::Config(format!(
                "ssim {} outside [0, 1]",
                self.ssim
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_uses_match_both_geometries() {
        let cifar = JsccConfig {
            c_out: 24,
            internal_channels: 256,
            n_residual_blocks: 4,
        };
        assert_eq!(cifar.channel_uses(32, 32).unwrap(), 768);
        let celeba = JsccConfig {
            c_out: 6,
            internal_channels: 256,
            n_residual_blocks: 4,
        };
        assert_eq!(celeba.channel_uses(128, 128).unwrap(), 3072);
        assert!(cifar.channel_uses(30, 32).is_err());
    }

    #[test]
    fn validation_catches_bad_configs() {
        let mut cfg = ExperimentConfig::paper_cifar();
        cfg.validate().unwrap();
        cfg.lambda_set = vec![3200.0, 200.0];
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::paper_cifar();
        cfg.eta_min_db = 10.0;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::paper_cifar();
        cfg.backhaul_rate = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::paper_cifar();
        cfg.channel = "carrier-pigeon".into();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn eta_standardization_uses_midpoint_and_half_width() {
        let cfg = ExperimentConfig::paper_cifar();
        assert_eq!(cfg.standardize_eta_db(1.0), -1.0);
        assert_eq!(cfg.standardize_eta_db(9.0), 1.0);
        assert_eq!(cfg.standardize_eta_db(5.0), 0.0);
        let fixed = ExperimentConfig::desk_32();
        assert_eq!(fixed.standardize_eta_db(5.0), 0.0);
        assert_eq!(fixed.standardize_eta_db(9.0), 0.0);
    }

    #[test]
    fn lambda_lookup_is_one_based() {
        let cfg = ExperimentConfig::paper_cifar();
        assert_eq!(cfg.lambda(1).unwrap(), 200.0);
        assert_eq!(cfg.lambda(5).unwrap(), 3200.0);
        assert!(cfg.lambda(0).is_err());
        assert!(cfg.lambda(6).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ExperimentConfig::paper_cifar();
        let text = toml::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rd_point_invariants() {
        let p = RdPoint {
            bpp: 1.5,
            psnr_db: 30.0,
            ssim: 0.95,
            lambda: 3200.0,
            eta_db: 5.0,
            k_prime: 768.0,
        };
        p.validate().unwrap();
        let bad = RdPoint { bpp: -0.1, ..p };
        assert!(bad.validate().is_err());
    }
}
