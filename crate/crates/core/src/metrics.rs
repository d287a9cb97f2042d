//! Reconstruction quality metrics and distribution diagnostics.

use crate::data::ImageTensor;
use crate::signal::ComplexSignal;
use crate::{CoreError, Result};

/// Peak signal-to-noise ratio in dB on the 0-255 pixel scale.
///
/// Identical images yield `f64::INFINITY` (reported by callers as "inf").
pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(CoreError::Shape(format!(
            "psnr inputs differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = 255.0 * (f64::from(x) - f64::from(y));
            d * d
        })
        .sum::<f64>()
        / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let mid = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - mid;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in w.iter_mut() {
        *v /= sum;
    }
    w
}

/// Mean structural similarity over 11x11 Gaussian-weighted windows
/// (sigma 1.5), computed per color channel on the 0-255 scale and averaged.
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(CoreError::Shape(format!(
            "ssim inputs differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (c, h, w) = a.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(CoreError::Shape(format!(
            "image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} ssim window"
        )));
    }
    let win = gaussian_window();
    let mut acc = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        let pa = a.channel(ch);
        let pb = b.channel(ch);
        for wy in 0..=(h - SSIM_WINDOW) {
            for wx in 0..=(w - SSIM_WINDOW) {
                let (mut mx, mut my) = (0.0f64, 0.0f64);
                let (mut sxx, mut syy, mut sxy) = (0.0f64, 0.0f64, 0.0f64);
                for dy in 0..SSIM_WINDOW {
                    for dx in 0..SSIM_WINDOW {
                        let weight = win[dy] * win[dx];
                        let x = 255.0 * f64::from(pa[(wy + dy) * w + wx + dx]);
                        let y = 255.0 * f64::from(pb[(wy + dy) * w + wx + dx]);
                        mx += weight * x;
                        my += weight * y;
                        sxx += weight * x * x;
                        syy += weight * y * y;
                        sxy += weight * x * y;
                    }
                }
                let vx = sxx - mx * mx;
                let vy = syy - my * my;
                let cov = sxy - mx * my;
                let s = ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2))
                    / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
                acc += s;
                count += 1;
            }
        }
    }
    Ok(acc / count as f64)
}

pub const HISTOGRAM_BINS: usize = 100;

/// A 100-bin histogram of unit-interval values; masses sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalHistogram {
    bins: Vec<f64>,
}

impl EmpiricalHistogram {
    /// Bin index (0-based) for a value in `[0, 1]`: bin `i` (1-based) covers
    /// `((i-1)/100, i/100]`, with 0 itself landing in the first bin.
    fn bin_of(x: f64) -> usize {
        let i = (x * HISTOGRAM_BINS as f64).ceil() as isize;
        (i.clamp(1, HISTOGRAM_BINS as isize) - 1) as usize
    }

    pub fn from_unit_values<I: IntoIterator<Item = f64>>(values: I) -> Result<Self> {
        let mut counts = vec![0u64; HISTOGRAM_BINS];
        let mut total = 0u64;
        for v in values {
            if !(0.0..=1.0).contains(&v) {
                return Err(CoreError::Config(format!(
                    "histogram input {v} outside the unit interval"
                )));
            }
            counts[Self::bin_of(v)] += 1;
            total += 1;
        }
        if total == 0 {
            return Err(CoreError::Config("histogram over zero values".into()));
        }
        Ok(Self {
            bins: counts.iter().map(|&c| c as f64 / total as f64).collect(),
        })
    }

    pub fn masses(&self) -> &[f64] {
        &self.bins
    }

    pub fn mass_sum(&self) -> f64 {
        self.bins.iter().sum()
    }
}

/// Empirical distribution of codeword elements: each signal is viewed as a
/// real vector, min-max normalized to the unit interval, and all elements
/// are pooled into a 100-bin histogram. Constant signals map to the
/// midpoint 0.5.
pub fn empirical_codeword_distribution(signals: &[ComplexSignal]) -> Result<EmpiricalHistogram> {
    if signals.is_empty() {
        return Err(CoreError::Config(
            "empirical distribution needs at least one signal".into(),
        ));
    }
    let mut values = Vec::new();
    for s in signals {
        let reals = s.to_real_view();
        let min = reals.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = reals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max > min {
            let range = max - min;
            values.extend(reals.iter().map(|&v| (v - min) / range));
        } else {
            values.extend(std::iter::repeat(0.5).take(reals.len()));
        }
    }
    EmpiricalHistogram::from_unit_values(values)
}

/// KL divergence `sum_i P(i) log2(P(i)/Q(i))` in bits, with `Q` floored at
/// 1e-12 wherever `P` has mass.
pub fn kl_divergence(p: &EmpiricalHistogram, q: &EmpiricalHistogram) -> f64 {
    const Q_FLOOR: f64 = 1e-12;
    p.masses()
        .iter()
        .zip(q.masses())
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi.max(Q_FLOOR)).log2())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{purpose, stream};
    use approx::assert_relative_eq;
    use num_complex::Complex64;
    use rand::Rng;

    fn image_from(data: Vec<f32>, c: usize, h: usize, w: usize) -> ImageTensor {
        ImageTensor::new(c, h, w, data).unwrap()
    }

    #[test]
    fn psnr_identical_is_infinite() {
        let a = image_from(vec![0.25; 3 * 16 * 16], 3, 16, 16);
        assert!(psnr(&a, &a).unwrap().is_infinite());
    }

    #[test]
    fn psnr_one_gray_level_error() {
        // Uniform error of one 0-255 gray level: 20*log10(255) = 48.1308 dB.
        let a = image_from(vec![0.5; 3 * 16 * 16], 3, 16, 16);
        let b = image_from(vec![0.5 + 1.0 / 255.0; 3 * 16 * 16], 3, 16, 16);
        assert_relative_eq!(psnr(&a, &b).unwrap(), 20.0 * 255f64.log10(), epsilon = 1e-6);
    }

    #[test]
    fn psnr_full_scale_error_is_zero_db() {
        let a = image_from(vec![0.0; 3 * 8 * 8], 3, 8, 8);
        let b = image_from(vec![1.0; 3 * 8 * 8], 3, 8, 8);
        assert_relative_eq!(psnr(&a, &b).unwrap(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn psnr_rejects_shape_mismatch() {
        let a = image_from(vec![0.0; 3 * 8 * 8], 3, 8, 8);
        let b = image_from(vec![0.0; 3 * 16 * 16], 3, 16, 16);
        assert!(psnr(&a, &b).is_err());
        assert!(ssim(&a, &b).is_err());
    }

    #[test]
    fn ssim_identical_is_one() {
        let mut rng = stream(5, purpose::EVAL, &[0]);
        let data: Vec<f32> = (0..3 * 32 * 32).map(|_| rng.gen::<f32>()).collect();
        let a = image_from(data, 3, 32, 32);
        assert_relative_eq!(ssim(&a, &a).unwrap(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn ssim_is_bounded() {
        let mut rng = stream(6, purpose::EVAL, &[0]);
        let data: Vec<f32> = (0..3 * 32 * 32).map(|_| rng.gen::<f32>()).collect();
        let a = image_from(data.clone(), 3, 32, 32);
        let inv = image_from(data.iter().map(|v| 1.0 - v).collect(), 3, 32, 32);
        let s = ssim(&a, &inv).unwrap();
        assert!((-1.0..=1.0).contains(&s), "ssim = {s}");
        assert!(s < 0.5);
    }

    #[test]
    fn histogram_constant_half_lands_in_bin_50() {
        let sig = ComplexSignal::new(vec![Complex64::new(0.5, 0.5); 8]).unwrap();
        let h = empirical_codeword_distribution(&[sig]).unwrap();
        assert_relative_eq!(h.masses()[49], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn histogram_uniform_values_fill_bins() {
        let mut rng = stream(8, purpose::EVAL, &[1]);
        let values: Vec<f64> = (0..1_200_000).map(|_| rng.gen::<f64>()).collect();
        let h = EmpiricalHistogram::from_unit_values(values).unwrap();
        for &m in h.masses() {
            assert!((m - 0.01).abs() < 0.002, "bin mass {m}");
        }
        assert_relative_eq!(h.mass_sum(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn histogram_extremes_land_in_first_and_last_bins() {
        // After min-max normalization the smallest element maps to 0 and the
        // largest to 1; they must land in bins 1 and 100.
        let sig = ComplexSignal::new(vec![
            Complex64::new(-0.9, 0.1),
            Complex64::new(0.3, 0.9),
            Complex64::new(0.0, 0.2),
        ])
        .unwrap();
        let h = empirical_codeword_distribution(&[sig]).unwrap();
        assert!(h.masses()[0] > 0.0);
        assert!(h.masses()[99] > 0.0);
    }

    #[test]
    fn kl_of_identical_distributions_is_zero() {
        let h = EmpiricalHistogram::from_unit_values((0..1000).map(|i| i as f64 / 1000.0)).unwrap();
        assert_relative_eq!(kl_divergence(&h, &h), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn kl_point_mass_vs_fair_coin_is_one_bit() {
        // P = (1, 0), Q = (0.5, 0.5) over two bins.
        let p = EmpiricalHistogram::from_unit_values(vec![0.005; 4]).unwrap();
        let q = EmpiricalHistogram::from_unit_values(vec![0.005, 0.005, 0.015, 0.015]).unwrap();
        assert_relative_eq!(kl_divergence(&p, &q), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn kl_is_nonnegative() {
        let mut rng = stream(9, purpose::EVAL, &[2]);
        for _ in 0..20 {
            let a: Vec<f64> = (0..5000).map(|_| rng.gen::<f64>()).collect();
            let b: Vec<f64> = (0..5000).map(|_| rng.gen::<f64>().powi(2)).collect();
            let p = EmpiricalHistogram::from_unit_values(a).unwrap();
            let q = EmpiricalHistogram::from_unit_values(b).unwrap();
            assert!(kl_divergence(&p, &q) >= 0.0);
        }
    }
}
