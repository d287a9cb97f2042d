//! Differentiable mirror of the channel simulation, operating on the real
//! view of codewords (`[B, 2k]`: real halves then imaginary halves).
//!
//! Channel noise and fading draws come in from explicit RNG streams so a
//! training step is a pure function of its inputs. The CSIT branch uses the
//! real-gain reduction (precoding followed by the fade equals `|h| x`),
//! which the pure-path tests verify against the complex formulation.

use candle_core::{DType, Device, Tensor};
use hdjscc_core::channel::{linear_to_db, sample_rayleigh};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{ModelError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelKind {
    Awgn,
    RayleighCsit,
    RayleighCsir,
}

impl ChannelKind {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "awgn" => Ok(Self::Awgn),
            "rayleigh_csit" => Ok(Self::RayleighCsit),
            "rayleigh_csir" => Ok(Self::RayleighCsir),
            other => Err(ModelError::Shape(format!("unknown channel '{other}'"))),
        }
    }

    pub fn is_fading(self) -> bool {
        !matches!(self, Self::Awgn)
    }
}

/// One batch's channel conditions: a shared SNR and per-item block fading.
pub struct BatchChannel {
    pub kind: ChannelKind,
    pub eta: f64,
    pub h: Vec<Complex64>,
}

impl BatchChannel {
    pub fn draw<R: Rng>(kind: ChannelKind, eta: f64, batch: usize, rng: &mut R) -> Self {
        let h = match kind {
            ChannelKind::Awgn => vec![Complex64::new(1.0, 0.0); batch],
            _ => (0..batch).map(|_| sample_rayleigh(rng)).collect(),
        };
        Self { kind, eta, h }
    }

    /// Per-item SNR (dB) the encoder conditions on: the effective
    /// `|h|^2 eta` under CSIT, the nominal SNR otherwise.
    pub fn encoder_eta_db(&self) -> Vec<f64> {
        self.h
            .iter()
            .map(|h| match self.kind {
                ChannelKind::RayleighCsit => linear_to_db((h.norm_sqr() * self.eta).max(1e-12)),
                _ => linear_to_db(self.eta),
            })
            .collect()
    }

    /// Nominal SNR in dB, the decoder-side conditioning.
    pub fn eta_db(&self) -> f64 {
        linear_to_db(self.eta)
    }

    fn h_tensors(&self, dtype: DType, device: &Device) -> Result<(Tensor, Tensor)> {
        let b = self.h.len();
        let re: Vec<f32> = self.h.iter().map(|h| h.re as f32).collect();
        let im: Vec<f32> = self.h.iter().map(|h| h.im as f32).collect();
        Ok((
            Tensor::from_vec(re, (b, 1), device)?.to_dtype(dtype)?,
            Tensor::from_vec(im, (b, 1), device)?.to_dtype(dtype)?,
        ))
    }

    /// Propagates a codeword batch through the hop and equalizes, handing
    /// back the estimate fed to the relay decoder. `noise` must be standard
    /// normal of the same shape as `x`.
    pub fn propagate(&self, x: &Tensor, noise: &Tensor) -> Result<Tensor> {
        let (b, n) = x.dims2()?;
        if self.h.len() != b {
            return Err(ModelError::Shape(format!(
                "{} fading draws for a batch of {b}",
                self.h.len()
            )));
        }
        if noise.dims() != x.dims() {
            return Err(ModelError::Shape("noise shape mismatch".into()));
        }
        let k = n / 2;
        // Complex noise variance 1/eta splits evenly across components.
        let sigma = (0.5 / self.eta).sqrt();
        let dtype = x.dtype();
        let device = x.device();
        match self.kind {
            ChannelKind::Awgn => Ok((x + (noise * sigma)?)?),
            ChannelKind::RayleighCsit => {
                // Precoded fade reduces to the real gain |h|.
                let (hr, hi) = self.h_tensors(dtype, device)?;
                let mag = ((hr.sqr()? + hi.sqr()?)? + 1e-24)?.sqrt()?;
                let y = (x.broadcast_mul(&mag)? + (noise * sigma)?)?;
                let denom = ((&mag * &mag)? + 1.0 / self.eta)?;
                let gain = mag.broadcast_div(&denom)?;
                Ok(y.broadcast_mul(&gain)?)
            }
            ChannelKind::RayleighCsir => {
                let (hr, hi) = self.h_tensors(dtype, device)?;
                let a = x.narrow(1, 0, k)?;
                let bb = x.narrow(1, k, k)?;
                let wr = noise.narrow(1, 0, k)?;
                let wi = noise.narrow(1, k, k)?;
                let yr = ((a.broadcast_mul(&hr)? - bb.broadcast_mul(&hi)?)? + (wr * sigma)?)?;
                let yi = ((a.broadcast_mul(&hi)? + bb.broadcast_mul(&hr)?)? + (wi * sigma)?)?;
                let denom = ((hr.sqr()? + hi.sqr()?)? + 1.0 / self.eta)?;
                let xr = ((yr.broadcast_mul(&hr)? + yi.broadcast_mul(&hi)?)?
                    .broadcast_div(&denom))?;
                let xi = ((yi.broadcast_mul(&hr)? - yr.broadcast_mul(&hi)?)?
                    .broadcast_div(&denom))?;
                Ok(Tensor::cat(&[&xr, &xi], 1)?)
            }
        }
    }
}

/// Standard normal tensor from an explicit RNG stream.
pub fn standard_normal_tensor<R: Rng>(
    rng: &mut R,
    shape: &[usize],
    dtype: DType,
    device: &Device,
) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let v: Vec<f32> = (0..n)
        .map(|_| rng.sample::<f32, _>(StandardNormal))
        .collect();
    Ok(Tensor::from_vec(v, shape, device)?.to_dtype(dtype)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use hdjscc_core::channel::{create_channel, ChannelState};
    use hdjscc_core::rng::{purpose, stream};
    use hdjscc_core::ComplexSignal;

    /// Graph-route propagation agrees with the pure complex-arithmetic
    /// route for every channel kind, given identical noise draws.
    #[test]
    fn graph_matches_pure_path() {
        let device = Device::Cpu;
        let k = 16usize;
        let mut sig_rng = stream(20, purpose::SAMPLING, &[0]);
        let reals: Vec<f64> = (0..2 * k).map(|_| sig_rng.gen_range(-0.5..0.5)).collect();
        let samples = ComplexSignal::from_real_view(&reals).unwrap();
        let sig = ComplexSignal::new(samples).unwrap();

        for (name, kind) in [
            ("awgn", ChannelKind::Awgn),
            ("rayleigh_csit", ChannelKind::RayleighCsit),
            ("rayleigh_csir", ChannelKind::RayleighCsir),
        ] {
            let mut h_rng = stream(21, purpose::FADING, &[0]);
            let bc = BatchChannel::draw(kind, 2.5, 1, &mut h_rng);

            // One standard-normal draw shared by both routes.
            let mut n_rng = stream(22, purpose::CHANNEL_NOISE, &[0]);
            let wn: Vec<f64> = (0..2 * k)
                .map(|_| n_rng.sample::<f64, _>(StandardNormal))
                .collect();

            // Graph route.
            let x = Tensor::from_vec(
                reals.iter().map(|&v| v as f32).collect::<Vec<f32>>(),
                (1, 2 * k),
                &device,
            )
            .unwrap();
            let noise = Tensor::from_vec(
                wn.iter().map(|&v| v as f32).collect::<Vec<f32>>(),
                (1, 2 * k),
                &device,
            )
            .unwrap();
            let got = bc
                .propagate(&x, &noise)
                .unwrap()
                .flatten_all()
                .unwrap()
                .to_vec1::<f32>()
                .unwrap();

            // Pure route: same h, same noise realization.
            let ch = create_channel(name).unwrap();
            let state = ChannelState {
                eta: 2.5,
                h: bc.h[0],
                csit: kind == ChannelKind::RayleighCsit,
                ell: 1,
            };
            let sigma = (0.5 / 2.5f64).sqrt();
            let w: Vec<Complex64> = (0..k)
                .map(|i| Complex64::new(wn[i] * sigma, wn[k + i] * sigma))
                .collect();
            let expect = match kind {
                ChannelKind::Awgn => sig
                    .samples()
                    .iter()
                    .zip(&w)
                    .map(|(&s, &n)| s + n)
                    .collect::<Vec<_>>(),
                ChannelKind::RayleighCsit => {
                    let pre = hdjscc_core::channel::precode_csit(&sig, state.h).unwrap();
                    let y: Vec<Complex64> = pre
                        .samples()
                        .iter()
                        .zip(&w)
                        .map(|(&s, &n)| s * state.h + n)
                        .collect();
                    hdjscc_core::channel::mmse_equalize(&y, state.h, state.eta, true)
                }
                ChannelKind::RayleighCsir => {
                    let y: Vec<Complex64> = sig
                        .samples()
                        .iter()
                        .zip(&w)
                        .map(|(&s, &n)| s * state.h + n)
                        .collect();
                    hdjscc_core::channel::mmse_equalize(&y, state.h, state.eta, false)
                }
            };
            let _ = ch;
            for i in 0..k {
                assert!(
                    (f64::from(got[i]) - expect[i].re).abs() < 1e-5,
                    "{name} re[{i}]: {} vs {}",
                    got[i],
                    expect[i].re
                );
                assert!(
                    (f64::from(got[k + i]) - expect[i].im).abs() < 1e-5,
                    "{name} im[{i}]: {} vs {}",
                    got[k + i],
                    expect[i].im
                );
            }
        }
    }

    #[test]
    fn encoder_conditioning_uses_effective_snr_under_csit() {
        let mut rng = stream(23, purpose::FADING, &[1]);
        let bc = BatchChannel::draw(ChannelKind::RayleighCsit, 2.0, 4, &mut rng);
        for (h, db) in bc.h.iter().zip(bc.encoder_eta_db()) {
            assert!((db - linear_to_db(h.norm_sqr() * 2.0)).abs() < 1e-9);
        }
        let mut rng = stream(23, purpose::FADING, &[2]);
        let bc = BatchChannel::draw(ChannelKind::RayleighCsir, 2.0, 4, &mut rng);
        for db in bc.encoder_eta_db() {
            assert!((db - linear_to_db(2.0)).abs() < 1e-12);
        }
    }
}
