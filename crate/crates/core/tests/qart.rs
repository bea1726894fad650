use proptest::prelude::*;
use qrsr::qart::{free_bit_basis, free_bit_count, transform, TargetPattern};
use qrsr::qr::{decode, decode_matrix, encode, rasterize, CodeConfig, EcLevel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PAYLOAD: &[u8] = b"Thanks reviewer!";

fn random_pattern(seed: u64, side: usize) -> TargetPattern {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TargetPattern {
        side,
        desired: (0..side * side).map(|_| rng.gen()).collect(),
        weight: (0..side * side).map(|_| rng.gen::<f64>()).collect(),
    }
}

fn reads_back(m: &qrsr::ModuleMatrix, payload: &[u8]) -> bool {
    decode_matrix(m).is_ok_and(|d| d.payload == payload && d.report.is_clean())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn transformed_symbols_decode_and_never_lose_agreement(
        seed in any::<u64>(),
        payload in proptest::collection::vec(any::<u8>(), 0..=40),
    ) {
        let cfg = CodeConfig::default();
        let pattern = random_pattern(seed, cfg.side());
        let y = encode(&payload, &cfg).unwrap();
        let (t, report) = transform(&payload, &cfg, &pattern).unwrap();
        prop_assert!(reads_back(&t, &payload));
        let d = decode(&rasterize(&t, &cfg), &cfg).unwrap();
        prop_assert!(d.payload == payload && d.report.is_clean());
        prop_assert!(pattern.agreement(&t) >= pattern.agreement(&y));
        prop_assert_eq!(report.after, pattern.agreement(&t));
        prop_assert_eq!(report.before, pattern.agreement(&y));
        prop_assert!(report.after <= report.attainable + 1e-9);
        for k in 0..t.side() * t.side() {
            if y.function_mask()[k] {
                prop_assert_eq!(t.cells()[k], y.cells()[k]);
            }
        }
    }
}

#[test]
fn transform_is_idempotent() {
    let cfg = CodeConfig::default();
    for seed in 0..5 {
        let (t, _) = transform(PAYLOAD, &cfg, &random_pattern(seed, cfg.side())).unwrap();
        let (again, report) = transform(PAYLOAD, &cfg, &TargetPattern::from_matrix(&t)).unwrap();
        assert_eq!(again, t, "seed {seed}");
        assert_eq!(report.after, report.attainable);
    }
}

#[test]
fn every_footprint_and_random_combinations_decode() {
    let cfg = CodeConfig::default();
    let basis = free_bit_basis(PAYLOAD, &cfg).unwrap();
    assert_eq!(basis.len(), free_bit_count(PAYLOAD.len(), &cfg).unwrap());
    for i in 0..basis.len() {
        assert!(reads_back(&basis.apply(&[i]), PAYLOAD), "bit {i}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let chosen: Vec<usize> = (0..basis.len()).filter(|_| rng.gen()).collect();
        assert!(reads_back(&basis.apply(&chosen), PAYLOAD));
    }
}

#[test]
fn works_at_every_level_with_room() {
    for ec in EcLevel::ALL {
        let cfg = CodeConfig::default().with_ec(ec);
        let pattern = random_pattern(11, cfg.side());
        let (t, report) = transform(PAYLOAD, &cfg, &pattern).unwrap();
        assert!(reads_back(&t, PAYLOAD), "{ec:?}");
        assert!(report.after >= report.before);
        assert!(report.free_bits > 0);
    }
}
