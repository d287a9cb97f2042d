use hdjscc_entropy::{ac_decode, ac_encode, CdfTable, TableSeq};
use proptest::prelude::*;

fn arb_table() -> impl Strategy<Value = CdfTable> {
    (2usize..300, -200i64..200, proptest::collection::vec(1u32..5000, 2..300)).prop_map(
        |(_, offset, weights)| {
            let total: f64 = weights.iter().map(|&w| f64::from(w)).sum();
            let probs: Vec<f64> = weights.iter().map(|&w| f64::from(w) / total).collect();
            CdfTable::from_probabilities(&probs, offset).unwrap()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn round_trip_is_lossless(table in arb_table(), raw in proptest::collection::vec(0u32..u32::MAX, 0..2000)) {
        let n = table.n_symbols() as i64;
        let symbols: Vec<i64> = raw
            .iter()
            .map(|&r| table.support_offset() + i64::from(r) % n)
            .collect();
        let bytes = ac_encode(&symbols, TableSeq::Single(&table)).unwrap();
        let back = ac_decode(&bytes, TableSeq::Single(&table), symbols.len()).unwrap();
        prop_assert_eq!(back, symbols);
    }
}
