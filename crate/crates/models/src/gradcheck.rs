//! Finite-difference verification of autodiff gradients.

use candle_core::Tensor;

use crate::store::ParamStore;
use crate::Result;

#[derive(Debug, Clone)]
pub struct GradCheckResult {
    pub param: String,
    pub index: usize,
    pub autodiff: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

impl GradCheckResult {
    /// Agreement test: relative error under the threshold, or both sides
    /// numerically dead.
    pub fn agrees(&self, tol: f64) -> bool {
        self.rel_err < tol || (self.autodiff.abs() < 1e-8 && self.numeric.abs() < 1e-8)
    }
}

/// Central-difference check of `d loss / d theta` for the given parameter
/// slices. The loss closure must recompute the full forward pass from the
/// store's current values. Run on an f64 model; f32 arithmetic cannot
/// resolve the quotient reliably at small epsilons.
pub fn autodiff_vs_finite_diff<F>(
    store: &ParamStore,
    mut loss_fn: F,
    checks: &[(String, Vec<usize>)],
    eps: f64,
) -> Result<Vec<GradCheckResult>>
where
    F: FnMut() -> Result<Tensor>,
{
    let loss = loss_fn()?;
    let grads = loss.backward()?;
    let mut results = Vec::new();
    for (name, indices) in checks {
        let var = store.get(name)?;
        let grad = grads
            .get(var.as_tensor())
            .map(|g| {
                g.flatten_all()
                    .and_then(|f| f.to_dtype(candle_core::DType::F64))
                    .and_then(|f| f.to_vec1::<f64>())
            })
            .transpose()?;
        let baseline = store.read_f64(name)?;
        for &idx in indices {
            let autodiff = grad.as_ref().map_or(0.0, |g| g[idx]);
            let mut plus = baseline.clone();
            plus[idx] += eps;
            store.write_f64(name, &plus)?;
            let l_plus = loss_fn()?.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
            let mut minus = baseline.clone();
            minus[idx] -= eps;
            store.write_f64(name, &minus)?;
            let l_minus = loss_fn()?.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
            store.write_f64(name, &baseline)?;
            let numeric = (l_plus - l_minus) / (2.0 * eps);
            let rel_err = (autodiff - numeric).abs() / autodiff.abs().max(numeric.abs()).max(1e-12);
            results.push(GradCheckResult {
                param: name.clone(),
                index: idx,
                autodiff,
                numeric,
                rel_err,
            });
        }
    }
    Ok(results)
}

/// Deterministically spreads `count` probe indices over a parameter of
/// `len` elements.
pub fn probe_indices(len: usize, count: usize) -> Vec<usize> {
    let count = count.min(len);
    (0..count).map(|i| i * len / count).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::Init;
    use candle_core::{DType, Device, Tensor};

    #[test]
    fn quadratic_loss_gradient_checks_out() {
        // loss = sum(w^2 * c): d/dw = 2 w c.
        let mut store = ParamStore::new(DType::F64, 0);
        store
            .var("w", &[4], Init::Values(vec![0.5, -1.0, 2.0, 0.1]))
            .unwrap();
        let c = Tensor::from_vec(vec![1.0f64, 2.0, 3.0, 4.0], 4, &Device::Cpu).unwrap();
        let store_ref = &store;
        let results = autodiff_vs_finite_diff(
            store_ref,
            || {
                let w = store_ref.get("w")?.as_tensor().clone();
                Ok((w.sqr()? * c.clone())?.sum_all()?)
            },
            &[("w".to_string(), vec![0, 1, 2, 3])],
            1e-4,
        )
        .unwrap();
        for r in &results {
            assert!(r.agrees(1e-3), "{r:?}");
            assert!(r.autodiff.abs() > 0.0);
        }
        // Analytic check for index 2: 2 * 2.0 * 3.0 = 12.
        assert!((results[2].autodiff - 12.0).abs() < 1e-9);
    }

    #[test]
    fn probe_indices_are_in_range_and_distinct() {
        let idx = probe_indices(100, 7);
        assert_eq!(idx.len(), 7);
        let mut sorted = idx.clone();
        sorted.dedup();
        assert_eq!(sorted.len(), 7);
        assert!(idx.iter().all(|&i| i < 100));
    }
}
