//! Counter-based reproducible RNG streams.
//!
//! Every random draw in the system comes from a stream derived from the
//! experiment seed plus a handful of counters (purpose, epoch, batch, item),
//! so results do not depend on worker counts or evaluation order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream purposes; kept as explicit constants so derivations are stable
/// across refactors.
pub mod purpose {
    pub const INIT: u64 = 1;
    pub const CHANNEL_NOISE: u64 = 2;
    pub const FADING: u64 = 3;
    pub const QUANT_NOISE: u64 = 4;
    pub const DATA_SHUFFLE: u64 = 5;
    pub const SAMPLING: u64 = 6;
    pub const SYNTH_IMAGE: u64 = 7;
    pub const EVAL: u64 = 8;
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a 256-bit ChaCha seed from the base seed and counter words.
pub fn derive_seed(base: u64, words: &[u64]) -> [u8; 32] {
    let mut state = base ^ 0x6A09_E667_F3BC_C908;
    let _ = splitmix64(&mut state);
    for &w in words {
        state ^= w.wrapping_mul(0xD6E8_FEB8_6659_FD93);
        let _ = splitmix64(&mut state);
    }
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    seed
}

/// An independent, reproducible stream for `(purpose, counters...)`.
pub fn stream(base: u64, purpose: u64, counters: &[u64]) -> ChaCha8Rng {
    let mut words = Vec::with_capacity(counters.len() + 1);
    words.push(purpose);
    words.extend_from_slice(counters);
    ChaCha8Rng::from_seed(derive_seed(base, &words))
}

/// Hashes a parameter name into a counter word, for per-tensor init streams.
pub fn name_tag(name: &str) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}
