//! Deterministic arithmetic (range) coding over 16-bit fixed-point CDF
//! tables.
//!
//! The coder uses 32-bit registers, byte-wise renormalization and explicit
//! carry propagation, so identical inputs produce bit-identical outputs on
//! every platform. Streams are byte sequences (big-endian bit packing,
//! padded to whole bytes). Coder instances are single-use; run as many in
//! parallel as you like.

use thiserror::Error;

pub const TOTAL_FREQ_BITS: u32 = 16;
pub const TOTAL_FREQ: u32 = 1 << TOTAL_FREQ_BITS;
const RENORM_LIMIT: u32 = 1 << 24;

#[derive(Debug, Error)]
pub enum CodingError {
    #[error("invalid CDF table: {0}")]
    InvalidTable(String),
    #[error("symbol {symbol} outside table support [{lo}, {hi}]")]
    OutOfSupport { symbol: i64, lo: i64, hi: i64 },
    #[error("truncated or corrupt stream at byte {0}")]
    Truncated(usize),
    #[error("table sequence length {tables} does not match symbol count {symbols}")]
    TableCount { tables: usize, symbols: usize },
}

pub type Result<T> = std::result::Result<T, CodingError>;

/// Cumulative frequencies over a contiguous integer support.
///
/// `cum` has one entry per symbol plus one: `cum[0] = 0`,
/// `cum[n] = 65536`, strictly increasing (every symbol keeps frequency
/// at least one).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CdfTable {
    cum: Vec<u32>,
    support_offset: i64,
}

impl CdfTable {
    pub fn new(cum: Vec<u32>, support_offset: i64) -> Result<Self> {
        if cum.len() < 2 {
            return Err(CodingError::InvalidTable("fewer than one symbol".into()));
        }
        if cum.len() - 1 >= TOTAL_FREQ as usize {
            return Err(CodingError::InvalidTable(format!(
                "{} symbols, limit is {}",
                cum.len() - 1,
                TOTAL_FREQ - 1
            )));
        }
        if cum[0] != 0 || *cum.last().unwrap() != TOTAL_FREQ {
            return Err(CodingError::InvalidTable(format!(
                "cum must run from 0 to {TOTAL_FREQ}, got {} to {}",
                cum[0],
                cum.last().unwrap()
            )));
        }
        if !cum.windows(2).all(|w| w[0] < w[1]) {
            return Err(CodingError::InvalidTable(
                "cumulative frequencies must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            cum,
            support_offset,
        })
    }

    /// Quantizes probabilities to 16-bit frequencies, deterministic across
    /// platforms: floor plus largest-remainder redistribution, with every
    /// symbol floored at frequency one.
    pub fn from_probabilities(probs: &[f64], support_offset: i64) -> Result<Self> {
        if probs.is_empty() || probs.len() >= TOTAL_FREQ as usize {
            return Err(CodingError::InvalidTable(format!(
                "{} probabilities",
                probs.len()
            )));
        }
        let mut freqs: Vec<u32> = Vec::with_capacity(probs.len());
        let mut remainders: Vec<(usize, u64)> = Vec::with_capacity(probs.len());
        for (i, &p) in probs.iter().enumerate() {
            if !(p.is_finite() && p >= 0.0) {
                return Err(CodingError::InvalidTable(format!("probability {p}")));
            }
            let scaled = p * f64::from(TOTAL_FREQ);
            let f = (scaled.floor() as u32).max(1);
            // Remainder in fixed point for a platform-independent sort key.
            let rem = ((scaled - scaled.floor()) * 4294967296.0) as u64;
            freqs.push(f);
            remainders.push((i, rem));
        }
        let mut total: i64 = freqs.iter().map(|&f| i64::from(f)).sum();
        if total < i64::from(TOTAL_FREQ) {
            remainders.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            let mut i = 0;
            while total < i64::from(TOTAL_FREQ) {
                freqs[remainders[i % remainders.len()].0] += 1;
                total += 1;
                i += 1;
            }
        } else {
            while total > i64::from(TOTAL_FREQ) {
                // Shave the largest frequency, never below one.
                let (idx, _) = freqs
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                    .unwrap();
                if freqs[idx] <= 1 {
                    return Err(CodingError::InvalidTable(
                        "cannot honor minimum frequencies".into(),
                    ));
                }
                let cut = (freqs[idx] - 1).min((total - i64::from(TOTAL_FREQ)) as u32);
                freqs[idx] -= cut;
                total -= i64::from(cut);
            }
        }
        let mut cum = Vec::with_capacity(freqs.len() + 1);
        let mut acc = 0u32;
        cum.push(0);
        for f in freqs {
            acc += f;
            cum.push(acc);
        }
        Self::new(cum, support_offset)
    }

    pub fn n_symbols(&self) -> usize {
        self.cum.len() - 1
    }

    pub fn support_offset(&self) -> i64 {
        self.support_offset
    }

    pub fn support_max(&self) -> i64 {
        self.support_offset + self.n_symbols() as i64 - 1
    }

    pub fn contains(&self, symbol: i64) -> bool {
        symbol >= self.support_offset && symbol <= self.support_max()
    }

    fn index_of(&self, symbol: i64) -> Result<usize> {
        if !self.contains(symbol) {
            return Err(CodingError::OutOfSupport {
                symbol,
                lo: self.support_offset,
                hi: self.support_max(),
            });
        }
        Ok((symbol - self.support_offset) as usize)
    }

    pub fn freq(&self, symbol: i64) -> Result<u32> {
        let i = self.index_of(symbol)?;
        Ok(self.cum[i + 1] - self.cum[i])
    }

    /// Table probability of a symbol (`freq / 65536`).
    pub fn prob(&self, symbol: i64) -> Result<f64> {
        Ok(f64::from(self.freq(symbol)?) / f64::from(TOTAL_FREQ))
    }

    /// Ideal codelength of a symbol under this table, in bits.
    pub fn ideal_bits(&self, symbol: i64) -> Result<f64> {
        Ok(-self.prob(symbol)?.log2())
    }

    fn lookup(&self, cum_value: u32) -> usize {
        // Largest i with cum[i] <= cum_value; cum is strictly increasing.
        match self.cum.binary_search(&cum_value) {
            Ok(i) => i.min(self.n_symbols() - 1),
            Err(i) => i - 1,
        }
    }

    pub fn cum(&self) -> &[u32] {
        &self.cum
    }
}

/// Per-symbol table selection for a stream: one shared table, one table
/// per symbol (the conditional-Gaussian case), or a shared bank indexed
/// per symbol (per-channel priors).
#[derive(Clone, Copy)]
pub enum TableSeq<'a> {
    Single(&'a CdfTable),
    PerSymbol(&'a [CdfTable]),
    ByIndex {
        tables: &'a [CdfTable],
        indices: &'a [usize],
    },
}

impl<'a> TableSeq<'a> {
    fn get(&self, i: usize) -> &'a CdfTable {
        match self {
            TableSeq::Single(t) => t,
            TableSeq::PerSymbol(ts) => &ts[i],
            TableSeq::ByIndex { tables, indices } => &tables[indices[i]],
        }
    }

    fn check_len(&self, n: usize) -> Result<()> {
        match self {
            TableSeq::PerSymbol(ts) if ts.len() != n => Err(CodingError::TableCount {
                tables: ts.len(),
                symbols: n,
            }),
            TableSeq::ByIndex { indices, .. } if indices.len() != n => {
                Err(CodingError::TableCount {
                    tables: indices.len(),
                    symbols: n,
                })
            }
            _ => Ok(()),
        }
    }
}

struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    pending: u64,
    started: bool,
    out: Vec<u8>,
}

impl RangeEncoder {
    fn new() -> Self {
        Self {
            low: 0,
            range: u32::MAX,
            cache: 0,
            pending: 0,
            started: false,
            out: Vec::new(),
        }
    }

    fn encode(&mut self, cum_low: u32, freq: u32) {
        let r = self.range >> TOTAL_FREQ_BITS;
        self.low += u64::from(r) * u64::from(cum_low);
        self.range = r * freq;
        while self.range < RENORM_LIMIT {
            self.shift_low();
            self.range <<= 8;
        }
    }

    fn shift_low(&mut self) {
        let carry = (self.low >> 32) as u8;
        if self.low < 0xFF00_0000 || carry == 1 {
            if self.started {
                self.out.push(self.cache.wrapping_add(carry));
            }
            while self.pending > 0 {
                self.out.push(0xFFu8.wrapping_add(carry));
                self.pending -= 1;
            }
            self.cache = (self.low >> 24) as u8;
            self.started = true;
        } else {
            self.pending += 1;
        }
        self.low = (self.low << 8) & 0xFFFF_FFFF;
    }

    fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

struct RangeDecoder<'a> {
    code: u32,
    range: u32,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    fn new(bytes: &'a [u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(CodingError::Truncated(bytes.len()));
        }
        let code = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
        Ok(Self {
            code,
            range: u32::MAX,
            bytes,
            pos: 4,
        })
    }

    fn decode(&mut self, table: &CdfTable) -> Result<i64> {
        let r = self.range >> TOTAL_FREQ_BITS;
        let dv = (self.code / r).min(TOTAL_FREQ - 1);
        let idx = table.lookup(dv);
        let cum_low = table.cum[idx];
        let freq = table.cum[idx + 1] - cum_low;
        self.code -= r * cum_low;
        self.range = r * freq;
        while self.range < RENORM_LIMIT {
            if self.pos >= self.bytes.len() {
                return Err(CodingError::Truncated(self.pos));
            }
            self.code = (self.code << 8) | u32::from(self.bytes[self.pos]);
            self.pos += 1;
            self.range <<= 8;
        }
        Ok(table.support_offset + idx as i64)
    }
}

/// Encodes a symbol sequence against its per-symbol CDF tables.
///
/// Every symbol must lie inside its table's support; out-of-range values
/// must be escaped by the caller beforehand.
pub fn ac_encode(symbols: &[i64], tables: TableSeq) -> Result<Vec<u8>> {
    tables.check_len(symbols.len())?;
    if symbols.is_empty() {
        return Ok(Vec::new());
    }
    let mut enc = RangeEncoder::new();
    for (i, &s) in symbols.iter().enumerate() {
        let t = tables.get(i);
        let idx = t.index_of(s)?;
        enc.encode(t.cum[idx], t.cum[idx + 1] - t.cum[idx]);
    }
    Ok(enc.finish())
}

/// Decodes `n_symbols` symbols; the tables must be identical to the ones
/// used at encode time (a mismatched table decodes to garbage that only a
/// downstream checksum can catch).
pub fn ac_decode(bytes: &[u8], tables: TableSeq, n_symbols: usize) -> Result<Vec<i64>> {
    ac_decode_with_consumed(bytes, tables, n_symbols).map(|(symbols, _)| symbols)
}

/// [`ac_decode`] plus the exact number of stream bytes consumed, which is
/// deterministic and lets callers append side data (escape payloads) after
/// the arithmetic-coded segment.
pub fn ac_decode_with_consumed(
    bytes: &[u8],
    tables: TableSeq,
    n_symbols: usize,
) -> Result<(Vec<i64>, usize)> {
    tables.check_len(n_symbols)?;
    if n_symbols == 0 {
        return Ok((Vec::new(), 0));
    }
    let mut dec = RangeDecoder::new(bytes)?;
    let mut out = Vec::with_capacity(n_symbols);
    for i in 0..n_symbols {
        out.push(dec.decode(tables.get(i))?);
    }
    // The decoder's four-byte priming read exactly offsets the encoder's
    // four-byte flush, so its position equals the stream length.
    Ok((out, dec.pos))
}

/// Total ideal codelength of a sequence in bits, `sum -log2 p_i` under the
/// quantized table probabilities.
pub fn ideal_codelength_bits(symbols: &[i64], tables: TableSeq) -> Result<f64> {
    tables.check_len(symbols.len())?;
    let mut total = 0.0;
    for (i, &s) in symbols.iter().enumerate() {
        total += tables.get(i).ideal_bits(s)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform_table(n: usize) -> CdfTable {
        CdfTable::from_probabilities(&vec![1.0 / n as f64; n], 0).unwrap()
    }

    fn random_table(rng: &mut ChaCha8Rng, n: usize, offset: i64) -> CdfTable {
        let mut probs: Vec<f64> = (0..n).map(|_| rng.gen::<f64>().powi(3) + 1e-6).collect();
        let sum: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= sum;
        }
        CdfTable::from_probabilities(&probs, offset).unwrap()
    }

    #[test]
    fn table_validation() {
        assert!(CdfTable::new(vec![0, TOTAL_FREQ], -5).is_ok());
        assert!(CdfTable::new(vec![0, 0, TOTAL_FREQ], 0).is_err()); // zero freq
        assert!(CdfTable::new(vec![0, 10, 20], 0).is_err()); // wrong total
        assert!(CdfTable::new(vec![1, TOTAL_FREQ], 0).is_err()); // nonzero start
        assert!(CdfTable::new(vec![0], 0).is_err());
    }

    #[test]
    fn quantized_probabilities_sum_to_total_and_floor_at_one() {
        let mut probs = vec![0.0; 300];
        probs[0] = 1.0;
        let t = CdfTable::from_probabilities(&probs, -150).unwrap();
        assert_eq!(*t.cum().last().unwrap(), TOTAL_FREQ);
        for s in -150..150i64 {
            assert!(t.freq(s).unwrap() >= 1);
        }
        assert!(t.freq(-150).unwrap() >= TOTAL_FREQ - 300);
    }

    #[test]
    fn near_deterministic_table_codes_a_thousand_symbols_in_48_bits() {
        let t = CdfTable::new(vec![0, TOTAL_FREQ], 0).unwrap();
        let symbols = vec![0i64; 1000];
        let bytes = ac_encode(&symbols, TableSeq::Single(&t)).unwrap();
        assert!(
            bytes.len() * 8 <= 48,
            "emitted {} bits for a zero-entropy stream",
            bytes.len() * 8
        );
        let back = ac_decode(&bytes, TableSeq::Single(&t), 1000).unwrap();
        assert_eq!(back, symbols);
    }

    #[test]
    fn uniform_256_table_is_eight_bits_per_symbol() {
        let t = uniform_table(256);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let symbols: Vec<i64> = (0..10_000).map(|_| rng.gen_range(0..256)).collect();
        let bytes = ac_encode(&symbols, TableSeq::Single(&t)).unwrap();
        let bits = bytes.len() * 8;
        let ideal = 80_000f64;
        assert!(
            (bits as f64 - ideal).abs() <= ideal * 0.001,
            "{bits} bits vs ideal {ideal}"
        );
        assert_eq!(
            ac_decode(&bytes, TableSeq::Single(&t), 10_000).unwrap(),
            symbols
        );
    }

    #[test]
    fn round_trip_with_per_symbol_tables() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tables: Vec<CdfTable> = (0..5_000)
            .map(|i| random_table(&mut rng, 2 + (i % 200), -(i as i64 % 37)))
            .collect();
        let symbols: Vec<i64> = tables
            .iter()
            .map(|t| rng.gen_range(t.support_offset()..=t.support_max()))
            .collect();
        let bytes = ac_encode(&symbols, TableSeq::PerSymbol(&tables)).unwrap();
        let back = ac_decode(&bytes, TableSeq::PerSymbol(&tables), symbols.len()).unwrap();
        assert_eq!(back, symbols);
    }

    #[test]
    fn realized_length_tracks_ideal_codelength() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..10usize {
            let t = random_table(&mut rng, 64 + trial * 17, -32);
            // Sample from the table distribution itself.
            let symbols: Vec<i64> = (0..20_000)
                .map(|_| {
                    let u = rng.gen_range(0..TOTAL_FREQ);
                    t.lookup(u) as i64 + t.support_offset()
                })
                .collect();
            let bytes = ac_encode(&symbols, TableSeq::Single(&t)).unwrap();
            let ideal = ideal_codelength_bits(&symbols, TableSeq::Single(&t)).unwrap();
            let bits = (bytes.len() * 8) as f64;
            assert!(
                bits <= ideal * 1.01 + 32.0,
                "trial {trial}: {bits} bits vs ideal {ideal}"
            );
            assert_eq!(
                ac_decode(&bytes, TableSeq::Single(&t), symbols.len()).unwrap(),
                symbols
            );
        }
    }

    #[test]
    fn identical_inputs_give_identical_bytes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = random_table(&mut rng, 100, -50);
        let symbols: Vec<i64> = (0..1_000)
            .map(|_| rng.gen_range(t.support_offset()..=t.support_max()))
            .collect();
        let a = ac_encode(&symbols, TableSeq::Single(&t)).unwrap();
        let b = ac_encode(&symbols, TableSeq::Single(&t)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn consumed_bytes_equal_the_stream_length() {
        // Side data appended after the arithmetic segment must stay
        // untouched by the decoder.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [1usize, 3, 100, 5_000] {
            let t = random_table(&mut rng, 40, -20);
            let symbols: Vec<i64> = (0..n)
                .map(|_| rng.gen_range(t.support_offset()..=t.support_max()))
                .collect();
            let bytes = ac_encode(&symbols, TableSeq::Single(&t)).unwrap();
            let mut with_tail = bytes.clone();
            with_tail.extend_from_slice(&[0xAB, 0xCD, 0xEF]);
            let (back, consumed) =
                ac_decode_with_consumed(&with_tail, TableSeq::Single(&t), n).unwrap();
            assert_eq!(back, symbols);
            assert_eq!(consumed, bytes.len(), "n = {n}");
        }
    }

    #[test]
    fn empty_sequence_is_empty_stream() {
        let t = uniform_table(4);
        let bytes = ac_encode(&[], TableSeq::Single(&t)).unwrap();
        assert!(bytes.is_empty());
        assert!(ac_decode(&bytes, TableSeq::Single(&t), 0)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn truncated_stream_is_detected() {
        let t = uniform_table(256);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let symbols: Vec<i64> = (0..1_000).map(|_| rng.gen_range(0..256)).collect();
        let bytes = ac_encode(&symbols, TableSeq::Single(&t)).unwrap();
        let cut = &bytes[..bytes.len() / 2];
        assert!(matches!(
            ac_decode(cut, TableSeq::Single(&t), 1_000),
            Err(CodingError::Truncated(_))
        ));
        assert!(matches!(
            ac_decode(&[1, 2], TableSeq::Single(&t), 3),
            Err(CodingError::Truncated(_))
        ));
    }

    #[test]
    fn out_of_support_symbol_is_rejected() {
        let t = uniform_table(4);
        assert!(matches!(
            ac_encode(&[4], TableSeq::Single(&t)),
            Err(CodingError::OutOfSupport { .. })
        ));
    }

    #[test]
    fn wrong_table_decodes_to_garbage_without_panicking() {
        // Documented limitation: a mismatched table is only caught by a
        // downstream checksum.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let t1 = random_table(&mut rng, 100, 0);
        let t2 = random_table(&mut rng, 100, 0);
        let symbols: Vec<i64> = (0..500).map(|_| rng.gen_range(0..100)).collect();
        let bytes = ac_encode(&symbols, TableSeq::Single(&t1)).unwrap();
        match ac_decode(&bytes, TableSeq::Single(&t2), 500) {
            Ok(decoded) => assert_ne!(decoded, symbols),
            Err(CodingError::Truncated(_)) => {}
            Err(e) => panic!("unexpected error {e}"),
        }
    }
}
