//! Learned factorized prior: one monotone CDF per hyper-latent channel,
//! built from stacked nonlinear stages and initialized to a logistic CDF.
//!
//! Two evaluation routes exist by design: a tensor route used inside the
//! training graph, and a pure-f64 scalar route used to build the 16-bit CDF
//! tables embedded in checkpoints (bit-identical across platforms). The
//! prior is not conditioned on the channel SNR.

use candle_core::Tensor;
use hdjscc_entropy::CdfTable;

use crate::nn::{sigmoid, softplus};
use crate::store::{Init, ParamStore};
use crate::{ModelError, Result, PROB_FLOOR, SUPPORT_RADIUS};

/// Width of the interior stages.
const STAGE_WIDTH: usize = 3;

struct StageTensors {
    h_raw: Tensor,         // [C, d_out, d_in]
    b: Tensor,             // [C, d_out, 1]
    a_raw: Option<Tensor>, // [C, d_out, 1]; absent on the final stage
}

pub struct FactorizedPrior {
    stages: Vec<StageTensors>,
    names: Vec<String>,
    channels: usize,
}

fn stage_dims(k_stages: usize) -> Vec<(usize, usize)> {
    // (d_out, d_in) per stage: 1 -> r -> ... -> r -> 1.
    (0..k_stages)
        .map(|k| {
            let d_in = if k == 0 { 1 } else { STAGE_WIDTH };
            let d_out = if k == k_stages - 1 { 1 } else { STAGE_WIDTH };
            (d_out, d_in)
        })
        .collect()
}

/// Per-stage matrix entry such that the composed initial CDF is
/// `sigmoid(x / init_scale)`.
fn init_gain(k_stages: usize, init_scale: f64) -> f64 {
    let interior_sums = (k_stages - 1) as f64;
    ((1.0 / init_scale) / (STAGE_WIDTH as f64).powf(interior_sums)).powf(1.0 / k_stages as f64)
}

fn softplus_inv(y: f64) -> f64 {
    (y.exp() - 1.0).ln()
}

impl FactorizedPrior {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        channels: usize,
        k_stages: usize,
        init_scale: f64,
    ) -> Result<Self> {
        assert!(k_stages >= 2, "prior needs at least two stages");
        let gain_raw = softplus_inv(init_gain(k_stages, init_scale));
        let mut stages = Vec::new();
        let mut names = Vec::new();
        for (k, (d_out, d_in)) in stage_dims(k_stages).into_iter().enumerate() {
            let h_name = format!("{prefix}.h{k}");
            let b_name = format!("{prefix}.b{k}");
            let h_raw = store.var(&h_name, &[channels, d_out, d_in], Init::Const(gain_raw))?;
            let b = store.var(&b_name, &[channels, d_out, 1], Init::Const(0.0))?;
            names.push(h_name);
            names.push(b_name);
            let a_raw = if k + 1 < k_stages {
                let a_name = format!("{prefix}.a{k}");
                let a = store.var(&a_name, &[channels, d_out, 1], Init::Const(0.0))?;
                names.push(a_name);
                Some(a)
            } else {
                None
            };
            stages.push(StageTensors { h_raw, b, a_raw });
        }
        Ok(Self {
            stages,
            names,
            channels,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    /// CDF values for `x` of shape `[C, 1, N]`; monotone in `x` with limits
    /// 0 and 1.
    pub fn cdf(&self, x: &Tensor) -> Result<Tensor> {
        let (c, one, _n) = x.dims3()?;
        if c != self.channels || one != 1 {
            return Err(ModelError::Shape(format!(
                "prior expects [{}, 1, N], got {:?}",
                self.channels,
                x.dims()
            )));
        }
        let mut cur = x.clone();
        let count = self.stages.len();
        for (k, st) in self.stages.iter().enumerate() {
            let weights = softplus(&st.h_raw)?;
            let u = weights.matmul(&cur)?.broadcast_add(&st.b)?;
            if k + 1 < count {
                let a = st.a_raw.as_ref().expect("interior stage has a");
                cur = (&u + a.tanh()?.broadcast_mul(&u.tanh()?)?)?;
            } else {
                cur = sigmoid(&u)?;
            }
        }
        Ok(cur)
    }

    /// Per-element probability of hyper-latents under the box-convolved
    /// prior, `F(v + 1/2) - F(v - 1/2)`, floored for coding stability.
    /// Input/output shape `[B, C, H, W]`.
    pub fn likelihood(&self, v: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = v.dims4()?;
        let flat = v
            .permute((1, 0, 2, 3))?
            .contiguous()?
            .reshape((c, 1, b * h * w))?;
        let hi = self.cdf(&(&flat + 0.5)?)?;
        let lo = self.cdf(&(&flat - 0.5)?)?;
        let p = (hi - lo)?.maximum(PROB_FLOOR)?;
        Ok(p.reshape((c, b, h, w))?.permute((1, 0, 2, 3))?.contiguous()?)
    }

    /// Reads the live weights into plain f64 buffers for the scalar route.
    pub fn snapshot(&self, store: &ParamStore) -> Result<PriorSnapshot> {
        let k_stages = self.stages.len();
        let dims = stage_dims(k_stages);
        let mut stages = Vec::with_capacity(k_stages);
        for k in 0..k_stages {
            // Interior stages registered three names (h, b, a), the final
            // stage two, so k*3 indexes the k-th stage's h entry.
            let h = store.read_f64(&self.names[k * 3])?;
            let b = store.read_f64(&self.names[k * 3 + 1])?;
            let a = if k + 1 < k_stages {
                Some(store.read_f64(&self.names[k * 3 + 2])?)
            } else {
                None
            };
            stages.push(SnapshotStage {
                h,
                b,
                a,
                d_out: dims[k].0,
                d_in: dims[k].1,
            });
        }
        Ok(PriorSnapshot {
            stages,
            channels: self.channels,
        })
    }
}

struct SnapshotStage {
    h: Vec<f64>,
    b: Vec<f64>,
    a: Option<Vec<f64>>,
    d_out: usize,
    d_in: usize,
}

/// Plain-f64 copy of the prior weights; evaluation is pure Rust arithmetic
/// so CDF tables come out identical on every platform.
pub struct PriorSnapshot {
    stages: Vec<SnapshotStage>,
    channels: usize,
}

fn softplus_f64(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl PriorSnapshot {
    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Scalar CDF for one channel.
    pub fn cdf(&self, channel: usize, x: f64) -> f64 {
        let mut cur = vec![x];
        let count = self.stages.len();
        for (k, st) in self.stages.iter().enumerate() {
            let (d_out, d_in) = (st.d_out, st.d_in);
            let h_base = channel * d_out * d_in;
            let v_base = channel * d_out;
            let mut next = vec![0f64; d_out];
            for (o, slot) in next.iter_mut().enumerate() {
                let mut acc = st.b[v_base + o];
                for (i, &ci) in cur.iter().enumerate() {
                    acc += softplus_f64(st.h[h_base + o * d_in + i]) * ci;
                }
                *slot = acc;
            }
            if k + 1 < count {
                let a = st.a.as_ref().expect("interior stage");
                for (o, u) in next.iter_mut().enumerate() {
                    *u += a[v_base + o].tanh() * u.tanh();
                }
                cur = next;
            } else {
                return 1.0 / (1.0 + (-next[0]).exp());
            }
        }
        unreachable!()
    }

    pub fn prob(&self, channel: usize, symbol: i64) -> f64 {
        self.cdf(channel, symbol as f64 + 0.5) - self.cdf(channel, symbol as f64 - 0.5)
    }

    /// Builds the per-channel coding table over `[-127, 127]` plus a final
    /// escape slot covering the tails.
    pub fn build_tables(&self) -> Result<Vec<CdfTable>> {
        let mut tables = Vec::with_capacity(self.channels);
        for c in 0..self.channels {
            let mut probs = Vec::with_capacity((2 * SUPPORT_RADIUS as usize + 1) + 1);
            let mut covered = 0.0;
            for s in -SUPPORT_RADIUS..=SUPPORT_RADIUS {
                let p = self.prob(c, s).max(0.0);
                covered += p;
                probs.push(p);
            }
            probs.push((1.0 - covered).max(0.0)); // escape
            tables.push(CdfTable::from_probabilities(&probs, -SUPPORT_RADIUS)?);
        }
        Ok(tables)
    }
}

/// The escape symbol value used by latent coding tables built over
/// `[-radius, radius]`: one past the top of the support.
pub fn escape_symbol(radius: i64) -> i64 {
    radius + 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    fn make_prior(channels: usize, seed: u64) -> (ParamStore, FactorizedPrior) {
        let mut store = ParamStore::new(DType::F64, seed);
        let prior = FactorizedPrior::new(&mut store, "prior", channels, 4, 10.0).unwrap();
        (store, prior)
    }

    #[test]
    fn fresh_prior_matches_logistic_mass_analytically() {
        // Initialized to sigmoid(x/10): mass of [-1/2, 1/2] is
        // 2*sigmoid(0.05) - 1.
        let (store, prior) = make_prior(3, 0);
        let snap = prior.snapshot(&store).unwrap();
        let expect = 2.0 / (1.0 + (-0.05f64).exp()) - 1.0;
        for c in 0..3 {
            let p = snap.prob(c, 0);
            assert!((p - expect).abs() < 1e-12, "p(0) = {p}, expected {expect}");
        }
        // Tensor route agrees with the scalar route.
        let xt = Tensor::from_vec(vec![0.5f64, -0.5, 0.5, -0.5, 0.5, -0.5], (3, 1, 2), &Device::Cpu)
            .unwrap();
        let f = prior.cdf(&xt).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        for pair in f.chunks(2) {
            assert!((pair[0] - pair[1] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn cdf_is_monotone_with_unit_limits() {
        let (mut store, prior) = make_prior(2, 1);
        // Perturb the weights away from the symmetric init.
        for name in prior.param_names() {
            let mut v = store.read_f64(name).unwrap();
            for (i, x) in v.iter_mut().enumerate() {
                *x += ((i % 7) as f64 - 3.0) * 0.11;
            }
            store.write_f64(name, &v).unwrap();
        }
        let snap = prior.snapshot(&store).unwrap();
        for c in 0..2 {
            let mut prev = -1.0;
            for i in -400..=400 {
                let f = snap.cdf(c, i as f64 * 0.5);
                assert!(f >= prev - 1e-12, "cdf not monotone at {i}");
                assert!((0.0..=1.0).contains(&f));
                prev = f;
            }
            assert!(snap.cdf(c, -1e5) < 1e-9);
            assert!(snap.cdf(c, 1e5) > 1.0 - 1e-9);
        }
    }

    #[test]
    fn likelihood_telescopes_to_one() {
        let (store, prior) = make_prior(2, 2);
        let snap = prior.snapshot(&store).unwrap();
        for c in 0..2 {
            let mut sum = 0.0;
            for s in -500..=500 {
                sum += snap.prob(c, s);
            }
            let direct = snap.cdf(c, 500.5) - snap.cdf(c, -500.5);
            assert!((sum - direct).abs() < 1e-9);
            assert!((sum - 1.0).abs() < 1e-4, "sum = {sum}");
        }
    }

    #[test]
    fn tensor_likelihood_is_floored_and_shaped() {
        let (_store, prior) = make_prior(4, 3);
        let v = Tensor::from_vec(
            (0..4 * 2 * 2 * 2).map(|i| (i as f64 - 16.0) * 30.0).collect::<Vec<f64>>(),
            (2, 4, 2, 2),
            &Device::Cpu,
        )
        .unwrap();
        let p = prior.likelihood(&v).unwrap();
        assert_eq!(p.dims(), [2, 4, 2, 2]);
        for v in p.flatten_all().unwrap().to_vec1::<f64>().unwrap() {
            assert!(v >= PROB_FLOOR);
            assert!(v <= 1.0);
        }
    }

    #[test]
    fn coding_tables_cover_support_plus_escape() {
        let (store, prior) = make_prior(2, 4);
        let snap = prior.snapshot(&store).unwrap();
        let tables = snap.build_tables().unwrap();
        assert_eq!(tables.len(), 2);
        for t in &tables {
            assert_eq!(t.n_symbols() as i64, 2 * SUPPORT_RADIUS + 2);
            assert_eq!(t.support_offset(), -SUPPORT_RADIUS);
            assert_eq!(t.support_max(), escape_symbol(SUPPORT_RADIUS));
        }
    }
}
