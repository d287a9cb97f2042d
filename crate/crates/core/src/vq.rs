//! Naive vector quantization of received baseband signals: Lloyd codebook
//! training plus block-wise nearest-centroid coding.

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::signal::ComplexSignal;
use crate::{CoreError, Result};

/// A trained codebook of `2^(n_v * b)` centroids over `n_v`-dimensional
/// blocks, quantizing at `b` bits per element.
#[derive(Debug, Clone)]
pub struct VqCodebook {
    centroids: Vec<f64>, // row-major, rows of length n_v
    n_v: usize,
    bits_per_element: f64,
    distortion_history: Vec<f64>,
}

impl VqCodebook {
    pub fn n_v(&self) -> usize {
        self.n_v
    }

    pub fn bits_per_element(&self) -> f64 {
        self.bits_per_element
    }

    pub fn bits_per_block(&self) -> usize {
        (self.n_v as f64 * self.bits_per_element).round() as usize
    }

    pub fn num_centroids(&self) -> usize {
        self.centroids.len() / self.n_v
    }

    pub fn centroid(&self, idx: usize) -> &[f64] {
        &self.centroids[idx * self.n_v..(idx + 1) * self.n_v]
    }

    /// Per-iteration training distortion; non-increasing by construction of
    /// the Lloyd updates.
    pub fn distortion_history(&self) -> &[f64] {
        &self.distortion_history
    }

    fn nearest(&self, block: &[f64]) -> usize {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for i in 0..self.num_centroids() {
            let d: f64 = self
                .centroid(i)
                .iter()
                .zip(block)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }
}

/// Trains a Lloyd codebook on `n_v`-dimensional sample blocks.
///
/// Alternates nearest-centroid assignment and centroid recomputation until
/// the relative distortion drop falls below `tol` or `max_iters` is reached.
/// Empty clusters are re-seeded at the sample farthest from its assigned
/// centroid. All-identical samples exit early with every centroid at that
/// value.
pub fn lloyd_train<R: Rng>(
    samples: &[f64],
    n_v: usize,
    bits_per_element: f64,
    max_iters: usize,
    tol: f64,
    rng: &mut R,
) -> Result<VqCodebook> {
    if n_v == 0 || samples.len() % n_v != 0 {
        return Err(CoreError::Quantizer(format!(
            "sample length {} not divisible by block size {n_v}",
            samples.len()
        )));
    }
    let code_bits = n_v as f64 * bits_per_element;
    if (code_bits - code_bits.round()).abs() > 1e-9 || code_bits < 1.0 {
        return Err(CoreError::Quantizer(format!(
            "n_v * b = {code_bits} must be a positive integer"
        )));
    }
    let n_centroids = 1usize << (code_bits.round() as u32);
    let n_blocks = samples.len() / n_v;
    if n_blocks < 10 * n_centroids {
        return Err(CoreError::Quantizer(format!(
            "need at least {} blocks to train {n_centroids} centroids, got {n_blocks}",
            10 * n_centroids
        )));
    }
    let block = |i: usize| &samples[i * n_v..(i + 1) * n_v];

    // Degenerate corpus: a single distinct block value.
    let first = block(0);
    if (1..n_blocks).all(|i| block(i) == first) {
        let mut centroids = Vec::with_capacity(n_centroids * n_v);
        for _ in 0..n_centroids {
            centroids.extend_from_slice(first);
        }
        return Ok(VqCodebook {
            centroids,
            n_v,
            bits_per_element,
            distortion_history: vec![0.0],
        });
    }

    // Seed centroids from distinct random blocks.
    let mut order: Vec<usize> = (0..n_blocks).collect();
    order.shuffle(rng);
    let mut centroids: Vec<f64> = Vec::with_capacity(n_centroids * n_v);
    for &i in &order {
        let cand = block(i);
        let dup = centroids
            .chunks_exact(n_v)
            .any(|c| c.iter().zip(cand).all(|(a, b)| a == b));
        if !dup {
            centroids.extend_from_slice(cand);
            if centroids.len() == n_centroids * n_v {
                break;
            }
        }
    }
    while centroids.len() < n_centroids * n_v {
        // Fewer distinct blocks than centroids: pad with jittered copies.
        let i = rng.gen_range(0..n_blocks);
        for &v in block(i) {
            centroids.push(v + rng.gen_range(-1e-9..1e-9));
        }
    }

    let mut assignment = vec![0usize; n_blocks];
    let mut history = Vec::new();
    let mut prev = f64::INFINITY;
    for _ in 0..max_iters {
        // Assignment step.
        let mut distortion = 0.0;
        for (i, a) in assignment.iter_mut().enumerate() {
            let b = block(i);
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for c in 0..n_centroids {
                let d: f64 = centroids[c * n_v..(c + 1) * n_v]
                    .iter()
                    .zip(b)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            *a = best;
            distortion += best_d;
        }
        distortion /= n_blocks as f64;
        history.push(distortion);

        // Update step.
        let mut sums = vec![0f64; n_centroids * n_v];
        let mut counts = vec![0usize; n_centroids];
        for (i, &a) in assignment.iter().enumerate() {
            counts[a] += 1;
            for (s, &v) in sums[a * n_v..(a + 1) * n_v].iter_mut().zip(block(i)) {
                *s += v;
            }
        }
        for c in 0..n_centroids {
            if counts[c] > 0 {
                for d in 0..n_v {
                    centroids[c * n_v + d] = sums[c * n_v + d] / counts[c] as f64;
                }
            } else {
                // Re-seed at the sample farthest from its centroid.
                let far = (0..n_blocks)
                    .max_by(|&i, &j| {
                        let di = dist_to(&centroids, n_v, assignment[i], block(i));
                        let dj = dist_to(&centroids, n_v, assignment[j], block(j));
                        di.partial_cmp(&dj).unwrap()
                    })
                    .unwrap();
                let src = block(far).to_vec();
                centroids[c * n_v..(c + 1) * n_v].copy_from_slice(&src);
            }
        }

        if prev.is_finite() && prev > 0.0 && (prev - distortion) / prev < tol {
            break;
        }
        prev = distortion;
    }

    Ok(VqCodebook {
        centroids,
        n_v,
        bits_per_element,
        distortion_history: history,
    })
}

fn dist_to(centroids: &[f64], n_v: usize, c: usize, block: &[f64]) -> f64 {
    centroids[c * n_v..(c + 1) * n_v]
        .iter()
        .zip(block)
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

/// Quantizes a received signal block-by-block.
///
/// The real view (length `2k`, real parts then imaginary parts) is split
/// into `2k/n_v` blocks; each maps to its nearest centroid. Returns the
/// index stream packed big-endian (exactly `2kb` bits) and the
/// reconstruction built from codebook rows. Received signals carry channel
/// noise and are not bound by the transmit power constraint, so this takes
/// plain samples.
pub fn vq_forward(
    y: &[Complex64],
    codebook: &VqCodebook,
) -> Result<(Vec<u8>, usize, Vec<Complex64>)> {
    let mut reals = Vec::with_capacity(2 * y.len());
    reals.extend(y.iter().map(|c| c.re));
    reals.extend(y.iter().map(|c| c.im));
    let n_v = codebook.n_v();
    if reals.len() % n_v != 0 {
        return Err(CoreError::Quantizer(format!(
            "signal real view of length {} not divisible by n_v = {n_v}",
            reals.len()
        )));
    }
    let bits_per_block = codebook.bits_per_block();
    let n_blocks = reals.len() / n_v;
    let total_bits = n_blocks * bits_per_block;

    let mut packed = vec![0u8; total_bits.div_ceil(8)];
    let mut recon = Vec::with_capacity(reals.len());
    let mut bitpos = 0usize;
    for i in 0..n_blocks {
        let idx = codebook.nearest(&reals[i * n_v..(i + 1) * n_v]);
        for b in (0..bits_per_block).rev() {
            if (idx >> b) & 1 == 1 {
                packed[bitpos / 8] |= 0x80 >> (bitpos % 8);
            }
            bitpos += 1;
        }
        recon.extend_from_slice(codebook.centroid(idx));
    }
    let samples = ComplexSignal::from_real_view(&recon)?;
    Ok((packed, total_bits, samples))
}

/// Bits per pixel spent by the naive quantizer: `2 k b / (H W)`.
pub fn vq_bpp(k: usize, bits_per_element: f64, h: usize, w: usize) -> f64 {
    2.0 * k as f64 * bits_per_element / (h * w) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{purpose, stream};
    use approx::assert_relative_eq;
    use rand_distr::StandardNormal;

    #[test]
    fn one_bit_gaussian_quantizer_reaches_analytic_fixed_point() {
        // Lloyd fixed point for a 1-bit quantizer of N(0,1): +-sqrt(2/pi).
        let target = (2.0 / std::f64::consts::PI).sqrt();
        let mut rng = stream(100, purpose::SAMPLING, &[0]);
        let samples: Vec<f64> = (0..200_000)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let cb = lloyd_train(&samples, 1, 1.0, 100, 1e-9, &mut rng).unwrap();
        let mut cents: Vec<f64> = (0..2).map(|i| cb.centroid(i)[0]).collect();
        cents.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_relative_eq!(cents[0], -target, epsilon = 0.01);
        assert_relative_eq!(cents[1], target, epsilon = 0.01);
    }

    #[test]
    fn distortion_is_monotone_across_seeded_runs() {
        for run in 0..20u64 {
            let mut rng = stream(200, purpose::SAMPLING, &[run]);
            let samples: Vec<f64> = (0..4000)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let cb = lloyd_train(&samples, 2, 1.0, 50, 0.0, &mut rng).unwrap();
            let hist = cb.distortion_history();
            assert!(!hist.is_empty());
            for w in hist.windows(2) {
                assert!(
                    w[1] <= w[0] + 1e-12,
                    "distortion increased: {} -> {} (run {run})",
                    w[0],
                    w[1]
                );
            }
        }
    }

    #[test]
    fn degenerate_samples_exit_early_with_zero_distortion() {
        let samples = vec![0.75f64; 400];
        let mut rng = stream(1, purpose::SAMPLING, &[0]);
        let cb = lloyd_train(&samples, 2, 1.0, 50, 1e-6, &mut rng).unwrap();
        assert_eq!(cb.distortion_history(), &[0.0]);
        for i in 0..cb.num_centroids() {
            assert_eq!(cb.centroid(i), &[0.75, 0.75]);
        }
    }

    #[test]
    fn rejects_insufficient_samples() {
        let samples = vec![0.0f64; 30];
        let mut rng = stream(1, purpose::SAMPLING, &[1]);
        assert!(lloyd_train(&samples, 1, 3.0, 10, 1e-6, &mut rng).is_err());
    }

    #[test]
    fn fractional_bits_with_integer_block_cost_are_accepted() {
        let mut rng = stream(2, purpose::SAMPLING, &[2]);
        let samples: Vec<f64> = (0..3000)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        // n_v = 2, b = 1.5 => 8 centroids.
        let cb = lloyd_train(&samples, 2, 1.5, 30, 1e-6, &mut rng).unwrap();
        assert_eq!(cb.num_centroids(), 8);
        assert_eq!(cb.bits_per_block(), 3);
        // n_v = 3, b = 5/3 => 32 centroids.
        let cb = lloyd_train(&samples, 3, 5.0 / 3.0, 30, 1e-6, &mut rng).unwrap();
        assert_eq!(cb.num_centroids(), 32);
    }

    #[test]
    fn vq_forward_bit_accounting_and_reconstruction_rows() {
        let k = 768usize;
        let mut rng = stream(3, purpose::SAMPLING, &[3]);
        let samples: Vec<f64> = (0..20_000)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * 0.7)
            .collect();
        let cb = lloyd_train(&samples, 2, 1.0, 30, 1e-6, &mut rng).unwrap();

        let sig_reals: Vec<f64> = (0..2 * k)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * 0.7)
            .collect();
        let sig = ComplexSignal::from_real_view(&sig_reals).unwrap();

        let (packed, bits, recon) = vq_forward(&sig, &cb).unwrap();
        assert_eq!(bits, 2 * k); // 2kb with b = 1
        assert_eq!(packed.len(), (2 * k).div_ceil(8));
        assert_relative_eq!(vq_bpp(k, 1.0, 32, 32), 1.5, epsilon = 1e-12);

        // Every reconstructed block is literally a codebook row.
        let mut flat: Vec<f64> = Vec::with_capacity(2 * recon.len());
        flat.extend(recon.iter().map(|c| c.re));
        flat.extend(recon.iter().map(|c| c.im));
        for block in flat.chunks_exact(2) {
            let found = (0..cb.num_centroids()).any(|i| cb.centroid(i) == block);
            assert!(found);
        }
    }
}
