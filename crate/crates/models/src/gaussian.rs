//! Discretized conditional Gaussian: the entropy model of the main latent.
//!
//! Training uses the tensor route; deployment builds one 16-bit CDF table
//! per element from `(mu, sigma)` in pure f64, identically on the encode
//! and decode sides. Coding is mean-shifted: the symbol is
//! `z_hat - round(mu)` so the table support stays centered.

use candle_core::Tensor;
use hdjscc_entropy::CdfTable;

use crate::{Result, PROB_FLOOR, SIGMA_MIN, SUPPORT_RADIUS};

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Standard normal CDF via the error function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / SQRT2))
}

/// Probability that a Gaussian convolved with U(-1/2, 1/2) lands on `z`:
/// `Phi((z - mu + 1/2)/sigma) - Phi((z - mu - 1/2)/sigma)`.
pub fn discretized_gaussian_prob(z: f64, mu: f64, sigma: f64) -> f64 {
    let s = sigma.max(SIGMA_MIN);
    normal_cdf((z - mu + 0.5) / s) - normal_cdf((z - mu - 0.5) / s)
}

/// Tensor-route likelihood with the coding-stability floor; all inputs
/// share one shape.
pub fn likelihood_gaussian(z: &Tensor, mu: &Tensor, sigma: &Tensor) -> Result<Tensor> {
    let sigma = sigma.maximum(SIGMA_MIN)?;
    let scale = (&sigma * SQRT2)?;
    let d = (z - mu)?;
    let hi = ((&d + 0.5)?.broadcast_div(&scale))?.erf()?;
    let lo = ((&d - 0.5)?.broadcast_div(&scale))?.erf()?;
    let p = ((hi - lo)? * 0.5)?;
    Ok(p.maximum(PROB_FLOOR)?)
}

/// Support radius for one element's table: wide enough that the tails
/// carry negligible mass, capped at the global support.
pub fn table_radius(sigma: f64) -> i64 {
    let r = (6.0 * sigma.max(SIGMA_MIN)).ceil() as i64 + 2;
    r.clamp(2, SUPPORT_RADIUS)
}

/// Builds the coding table for one latent element. Symbols are residuals
/// `z_hat - round(mu)` over `[-radius, radius]`, with a trailing escape
/// slot for the tails.
pub fn gaussian_cdf_table(mu: f64, sigma: f64) -> Result<CdfTable> {
    let center = mu.round();
    let delta = mu - center;
    let radius = table_radius(sigma);
    let mut probs = Vec::with_capacity(2 * radius as usize + 2);
    let mut covered = 0.0;
    for r in -radius..=radius {
        let p = discretized_gaussian_prob(r as f64 + delta, 0.0, sigma).max(0.0);
        covered += p;
        probs.push(p);
    }
    probs.push((1.0 - covered).max(0.0)); // escape
    Ok(CdfTable::from_probabilities(&probs, -radius)?)
}

/// Residual symbol for a quantized latent under its table center.
pub fn residual_symbol(z_hat: i64, mu: f64) -> i64 {
    z_hat - mu.round() as i64
}

/// Inverse of [`residual_symbol`].
pub fn latent_from_residual(residual: i64, mu: f64) -> i64 {
    residual + mu.round() as i64
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn centered_unit_gaussian_mass_matches_normal_table() {
        // Phi(0.5) - Phi(-0.5) = 0.38292 for z = mu, sigma = 1.
        let p = discretized_gaussian_prob(0.0, 0.0, 1.0);
        assert!((p - 0.38292).abs() < 1e-5, "p = {p}");
        let z = Tensor::from_vec(vec![0.0f64], 1, &Device::Cpu).unwrap();
        let mu = Tensor::from_vec(vec![0.0f64], 1, &Device::Cpu).unwrap();
        let sigma = Tensor::from_vec(vec![1.0f64], 1, &Device::Cpu).unwrap();
        let pt = likelihood_gaussian(&z, &mu, &sigma)
            .unwrap()
            .to_vec1::<f64>()
            .unwrap()[0];
        assert!((pt - p).abs() < 1e-12);
    }

    #[test]
    fn mass_sums_to_one_over_the_integers() {
        for (mu, sigma) in [(0.3f64, 0.7f64), (-2.4, 3.1), (10.0, 0.2), (0.0, 12.0)] {
            let window = (12.0 * sigma).ceil() as i64 + mu.abs().ceil() as i64 + 5;
            let sum: f64 = (-window..=window)
                .map(|z| discretized_gaussian_prob(z as f64, mu, sigma))
                .sum();
            assert!((sum - 1.0).abs() < 1e-4, "sum = {sum} for mu={mu} sigma={sigma}");
        }
    }

    #[test]
    fn wide_gaussian_peak_approaches_density_value() {
        // For large sigma the mass at z = mu tends to 1/(sigma * sqrt(2 pi)).
        for sigma in [20.0, 100.0, 500.0] {
            let p = discretized_gaussian_prob(0.0, 0.0, sigma);
            let density = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
            assert!(
                (p / density - 1.0).abs() < 1e-3,
                "sigma {sigma}: {p} vs {density}"
            );
        }
    }

    #[test]
    fn tables_are_deterministic_and_mean_shifted() {
        let a = gaussian_cdf_table(3.7, 0.9).unwrap();
        let b = gaussian_cdf_table(3.7, 0.9).unwrap();
        assert_eq!(a, b);
        // Symbol for z_hat = 4 under mu = 3.7 (center 4) is 0.
        assert_eq!(residual_symbol(4, 3.7), 0);
        assert_eq!(latent_from_residual(0, 3.7), 4);
        // The most probable symbol is the centered residual.
        let p0 = a.prob(0).unwrap();
        for s in -3..=3i64 {
            assert!(a.prob(s).unwrap() <= p0 + 1e-12);
        }
    }

    #[test]
    fn tiny_sigma_keeps_a_small_support() {
        let t = gaussian_cdf_table(0.0, 0.01).unwrap();
        assert!(t.n_symbols() <= 8);
        // Nearly all mass on the center symbol.
        assert!(t.prob(0).unwrap() > 0.999);
    }

    #[test]
    fn floor_applies_to_tensor_route() {
        let z = Tensor::from_vec(vec![100.0f64], 1, &Device::Cpu).unwrap();
        let mu = Tensor::from_vec(vec![0.0f64], 1, &Device::Cpu).unwrap();
        let sigma = Tensor::from_vec(vec![0.5f64], 1, &Device::Cpu).unwrap();
        let p = likelihood_gaussian(&z, &mu, &sigma)
            .unwrap()
            .to_vec1::<f64>()
            .unwrap()[0];
        assert_eq!(p, PROB_FLOOR);
    }
}
