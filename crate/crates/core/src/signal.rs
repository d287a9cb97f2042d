//! Complex baseband signals under an average power constraint.

use num_complex::Complex64;

use crate::{CoreError, Result};

/// Slack tolerated when validating the average power constraint; covers
/// accumulation error when signals are produced in single precision.
pub const POWER_TOL: f64 = 1e-6;

/// A length-`k` complex baseband vector with average power at most one.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSignal {
    samples: Vec<Complex64>,
}

impl ComplexSignal {
    /// Wraps samples that already satisfy the power constraint.
    pub fn new(samples: Vec<Complex64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(CoreError::DegenerateSignal("empty signal".into()));
        }
        let p = avg_power(&samples);
        if p > 1.0 + POWER_TOL {
            return Err(CoreError::DegenerateSignal(format!(
                "average power {p} exceeds the unit constraint"
            )));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn k(&self) -> usize {
        self.samples.len()
    }

    pub fn avg_power(&self) -> f64 {
        avg_power(&self.samples)
    }

    /// Real view of the signal: real parts of all samples followed by the
    /// imaginary parts. This is the fixed bijection used across the system
    /// when a complex vector is treated as a real one of length `2k`.
    pub fn to_real_view(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.samples.len());
        out.extend(self.samples.iter().map(|c| c.re));
        out.extend(self.samples.iter().map(|c| c.im));
        out
    }

    /// Inverse of [`to_real_view`](Self::to_real_view); `reals.len()` must be even.
    pub fn from_real_view(reals: &[f64]) -> Result<Vec<Complex64>> {
        if reals.len() % 2 != 0 {
            return Err(CoreError::Shape(format!(
                "real view length {} is odd",
                reals.len()
            )));
        }
        let k = reals.len() / 2;
        Ok((0..k)
            .map(|i| Complex64::new(reals[i], reals[k + i]))
            .collect())
    }
}

pub fn avg_power(samples: &[Complex64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|c| c.norm_sqr()).sum::<f64>() / samples.len() as f64
}

/// Scales a vector onto the unit average-power budget: `x * min(1, sqrt(k)/|x|)`.
///
/// Signals already under budget pass through unchanged; the constraint is an
/// inequality and no up-scaling is performed.
pub fn normalize_power(x: &[Complex64]) -> Result<ComplexSignal> {
    if x.is_empty() {
        return Err(CoreError::DegenerateSignal("empty signal".into()));
    }
    let norm_sq: f64 = x.iter().map(|c| c.norm_sqr()).sum();
    if norm_sq == 0.0 {
        return Err(CoreError::DegenerateSignal("all-zero signal".into()));
    }
    let k = x.len() as f64;
    let scale = (k.sqrt() / norm_sq.sqrt()).min(1.0);
    let samples = x.iter().map(|c| c * scale).collect();
    Ok(ComplexSignal { samples })
}
