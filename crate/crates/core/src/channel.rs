//! Complex-baseband channel simulation: AWGN and Rayleigh hops, CSIT
//! precoding and MMSE equalization, plus a registry of channel strategies
//! selectable by name at runtime.
//!
//! SNR is kept linear internally; dB values are converted once at interface
//! boundaries. All randomness flows through explicit RNG handles so the
//! operations are pure and safe to run concurrently on independent streams.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::signal::ComplexSignal;
use crate::{CoreError, Result};

pub use crate::signal::normalize_power;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

/// Shannon capacity of a complex AWGN channel at linear SNR `eta`, in bits
/// per channel use.
pub fn capacity(eta: f64) -> f64 {
    (1.0 + eta).log2()
}

/// Per-transmission channel conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelState {
    /// Linear SNR of the access hop (`1/sigma^2` of the complex noise).
    pub eta: f64,
    /// Complex fading coefficient; exactly one for an AWGN hop.
    pub h: Complex64,
    /// Whether the transmitter knows `h`.
    pub csit: bool,
    /// Rate index into the lambda grid, in `[1, |Lambda|]`.
    pub ell: usize,
}

impl ChannelState {
    pub fn awgn(eta: f64, ell: usize) -> Self {
        Self {
            eta,
            h: Complex64::new(1.0, 0.0),
            csit: false,
            ell,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) {
            return Err(CoreError::Config(format!(
                "linear SNR must be positive, got {}",
                self.eta
            )));
        }
        Ok(())
    }
}

/// Draws one circularly-symmetric complex Gaussian sample with unit variance
/// (0.5 per real component).
pub fn sample_cn01<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample::<f64, _>(StandardNormal) * 0.5f64.sqrt();
    let im: f64 = rng.sample::<f64, _>(StandardNormal) * 0.5f64.sqrt();
    Complex64::new(re, im)
}

/// Rayleigh fading coefficient `h ~ CN(0, 1)`.
pub fn sample_rayleigh<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    sample_cn01(rng)
}

/// AWGN hop: `y = x + w`, with per-sample complex noise variance `1/eta`.
pub fn awgn<R: Rng + ?Sized>(x: &ComplexSignal, eta: f64, rng: &mut R) -> Vec<Complex64> {
    debug_assert!(eta > 0.0);
    let sigma = (1.0 / eta).sqrt();
    x.samples()
        .iter()
        .map(|&s| s + sample_cn01(rng) * sigma)
        .collect()
}

/// Phase precoding when the transmitter knows the channel: `(h*/|h|) x`.
/// Unit-modulus, so power is unchanged.
pub fn precode_csit(x: &ComplexSignal, h: Complex64) -> Result<ComplexSignal> {
    let mag = h.norm();
    if mag == 0.0 {
        return Err(CoreError::SingularFading);
    }
    let rot = h.conj() / mag;
    let samples = x.samples().iter().map(|&s| s * rot).collect();
    Ok(ComplexSignal::new(samples).expect("unit-modulus rotation preserves power"))
}

/// MMSE equalization of a faded observation.
///
/// With CSIT the effective channel after precoding is `|h|`, giving
/// `x_hat = |h| y / (|h|^2 + 1/eta)`; with CSI at the receiver only,
/// `x_hat = h* y / (|h|^2 + 1/eta)`.
pub fn mmse_equalize(y: &[Complex64], h: Complex64, eta: f64, csit: bool) -> Vec<Complex64> {
    debug_assert!(eta > 0.0);
    let denom = h.norm_sqr() + 1.0 / eta;
    let gain = if csit {
        Complex64::new(h.norm() / denom, 0.0)
    } else {
        h.conj() / denom
    };
    y.iter().map(|&v| v * gain).collect()
}

/// One channel strategy: how state is drawn, what SNR the encoder is
/// conditioned on, and how a codeword propagates to the equalized
/// observation handed to the relay.
pub trait ChannelModel: Send + Sync {
    fn name(&self) -> &'static str;

    /// Draws the per-image channel state for a nominal SNR and rate index.
    fn draw_state(&self, eta: f64, ell: usize, rng: &mut dyn rand::RngCore) -> ChannelState;

    /// Linear SNR the encoder should be conditioned on (the effective SNR
    /// `|h|^2 eta` when the transmitter knows the channel).
    fn encoder_snr(&self, state: &ChannelState) -> f64 {
        if state.csit {
            state.h.norm_sqr() * state.eta
        } else {
            state.eta
        }
    }

    /// Applies precoding (if any), the noisy hop and equalization (if any).
    fn propagate(
        &self,
        x: &ComplexSignal,
        state: &ChannelState,
        rng: &mut dyn rand::RngCore,
    ) -> Result<Vec<Complex64>>;
}

/// AWGN access hop: `h = 1`, no precoding, no equalization.
pub struct AwgnChannel;

impl ChannelModel for AwgnChannel {
    fn name(&self) -> &'static str {
        "awgn"
    }

    fn draw_state(&self, eta: f64, ell: usize, _rng: &mut dyn rand::RngCore) -> ChannelState {
        ChannelState::awgn(eta, ell)
    }

    fn propagate(
        &self,
        x: &ComplexSignal,
        state: &ChannelState,
        rng: &mut dyn rand::RngCore,
    ) -> Result<Vec<Complex64>> {
        state.validate()?;
        Ok(awgn(x, state.eta, rng))
    }
}

/// Rayleigh block fading with CSI at both ends: phase precoding at the
/// transmitter, MMSE equalization at the relay.
pub struct RayleighCsitChannel;

impl ChannelModel for RayleighCsitChannel {
    fn name(&self) -> &'static str {
        "rayleigh_csit"
    }

    fn draw_state(&self, eta: f64, ell: usize, rng: &mut dyn rand::RngCore) -> ChannelState {
        ChannelState {
            eta,
            h: sample_rayleigh(rng),
            csit: true,
            ell,
        }
    }

    fn propagate(
        &self,
        x: &ComplexSignal,
        state: &ChannelState,
        rng: &mut dyn rand::RngCore,
    ) -> Result<Vec<Complex64>> {
        state.validate()?;
        let precoded = precode_csit(x, state.h)?;
        let sigma = (1.0 / state.eta).sqrt();
        let y: Vec<Complex64> = precoded
            .samples()
            .iter()
            .map(|&s| s * state.h + sample_cn01(rng) * sigma)
            .collect();
        Ok(mmse_equalize(&y, state.h, state.eta, true))
    }
}

/// Rayleigh block fading with CSI at the receiver only.
pub struct RayleighCsirChannel;

impl ChannelModel for RayleighCsirChannel {
    fn name(&self) -> &'static str {
        "rayleigh_csir"
    }

    fn draw_state(&self, eta: f64, ell: usize, rng: &mut dyn rand::RngCore) -> ChannelState {
        ChannelState {
            eta,
            h: sample_rayleigh(rng),
            csit: false,
            ell,
        }
    }

    fn propagate(
        &self,
        x: &ComplexSignal,
        state: &ChannelState,
        rng: &mut dyn rand::RngCore,
    ) -> Result<Vec<Complex64>> {
        state.validate()?;
        let sigma = (1.0 / state.eta).sqrt();
        let y: Vec<Complex64> = x
            .samples()
            .iter()
            .map(|&s| s * state.h + sample_cn01(rng) * sigma)
            .collect();
        Ok(mmse_equalize(&y, state.h, state.eta, false))
    }
}

type ChannelFactory = fn() -> Box<dyn ChannelModel>;

fn registry() -> BTreeMap<&'static str, ChannelFactory> {
    let mut m: BTreeMap<&'static str, ChannelFactory> = BTreeMap::new();
    m.insert("awgn", || Box::new(AwgnChannel));
    m.insert("rayleigh_csit", || Box::new(RayleighCsitChannel));
    m.insert("rayleigh_csir", || Box::new(RayleighCsirChannel));
    m
}

pub fn channel_names() -> Vec<&'static str> {
    registry().keys().copied().collect()
}

/// Looks up a channel strategy by its registered name.
pub fn create_channel(name: &str) -> Result<Box<dyn ChannelModel>> {
    registry()
        .get(name)
        .map(|f| f())
        .ok_or_else(|| CoreError::UnknownStrategy {
            name: name.to_string(),
            available: channel_names().join(", "),
        })
}
