use proptest::collection::vec;
use proptest::prelude::*;
use proptest::strategy::ValueTree;

use sketchmon_core::fermat::FermatDump;
use sketchmon_core::hash::derive_seeds;
use sketchmon_core::modular::MERSENNE_61;
use sketchmon_core::tower::SizeEstimate;
use sketchmon_core::{FermatParams, FermatSketch, Flowset, Sampler, Sign, TowerConfig, TowerSketch};

const CASES: u32 = 10_000;

fn params(m: usize, seed: u64) -> FermatParams {
    FermatParams::new(3, m, MERSENNE_61, derive_seeds(seed, 3)).unwrap()
}

fn build(prm: &FermatParams, updates: &[(u64, i64)]) -> FermatSketch {
    let mut s = FermatSketch::new(prm.clone());
    for &(f, n) in updates {
        s.update(f, n).unwrap();
    }
    s
}

fn updates() -> impl Strategy<Value = Vec<(u64, i64)>> {
    vec((1u64..1 << 40, -1000i64..1000), 0..24)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    #[test]
    fn update_then_negate_restores(seed in any::<u64>(), base in updates(), f in 1u64..1 << 40, n in -1000i64..1000) {
        let prm = params(16, seed);
        let before = build(&prm, &base);
        let mut s = before.clone();
        s.update(f, n).unwrap();
        s.update(f, -n).unwrap();
        prop_assert_eq!(s, before);
    }

    #[test]
    fn combine_is_an_abelian_group(seed in any::<u64>(), a in updates(), b in updates(), c in updates()) {
        let prm = params(16, seed);
        let (sa, sb, sc) = (build(&prm, &a), build(&prm, &b), build(&prm, &c));
        let zero = FermatSketch::new(prm.clone());
        let ab = FermatSketch::combine(&sa, &sb, Sign::Plus).unwrap();
        prop_assert_eq!(&ab, &FermatSketch::combine(&sb, &sa, Sign::Plus).unwrap());
        let left = FermatSketch::combine(&ab, &sc, Sign::Plus).unwrap();
        let bc = FermatSketch::combine(&sb, &sc, Sign::Plus).unwrap();
        prop_assert_eq!(&left, &FermatSketch::combine(&sa, &bc, Sign::Plus).unwrap());
        prop_assert_eq!(&FermatSketch::combine(&sa, &zero, Sign::Plus).unwrap(), &sa);
        prop_assert!(FermatSketch::combine(&sa, &sa, Sign::Minus).unwrap().is_empty());
        prop_assert_eq!(&FermatSketch::combine(&ab, &sb, Sign::Minus).unwrap(), &sa);
        // encoding is linear in the stream
        let joined: Vec<(u64, i64)> = a.iter().chain(&b).copied().collect();
        prop_assert_eq!(&build(&prm, &joined), &ab);
    }

    #[test]
    fn every_array_conserves_the_count(seed in any::<u64>(), m in 1usize..64, ups in updates()) {
        let s = build(&params(m, seed), &ups);
        let total: i64 = ups.iter().map(|u| u.1).sum();
        for i in 0..3 {
            prop_assert_eq!(s.array_total(i), total);
        }
    }

    #[test]
    fn fold_commutes_with_replay(seed in any::<u64>(), narrow in 1usize..16, k in 1usize..8, ups in updates()) {
        let wide = params(narrow * k, seed);
        let folded = build(&wide, &ups).fold(k).unwrap();
        prop_assert_eq!(folded, build(&wide.resized(narrow).unwrap(), &ups));
    }

    #[test]
    fn successful_decode_is_exact(seed in any::<u64>(), ups in updates()) {
        let prm = params(64, seed);
        let s = build(&prm, &ups);
        let mut truth = Flowset::new();
        for &(f, n) in &ups {
            truth.add(f, n);
        }
        let out = s.decode();
        if out.is_success() {
            prop_assert_eq!(out.flowset, truth);
        }
    }

    #[test]
    fn dump_roundtrip(seed in any::<u64>(), ups in updates()) {
        let s = build(&params(8, seed), &ups);
        prop_assert_eq!(&FermatSketch::from_bytes(&s.to_bytes()).unwrap(), &s);
        prop_assert_eq!(FermatDump::from(&s).into_sketch().unwrap(), s);
    }

    #[test]
    fn tower_never_underestimates(seed in any::<u64>(), stream in vec(0u64..64, 0..400)) {
        // 16 counters per level keep collisions and saturation common
        let mut t = TowerSketch::new(TowerConfig::two_level(16, seed));
        let mut truth = std::collections::HashMap::new();
        for &f in &stream {
            t.update(f);
            *truth.entry(f).or_insert(0u64) += 1;
        }
        for (&f, &n) in &truth {
            match t.query(f) {
                SizeEstimate::Count { value } => prop_assert!(value >= n, "flow {} read {} < {}", f, value, n),
                SizeEstimate::Saturated { floor } => prop_assert!(floor >= 255),
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_and_nested(seed in any::<u64>(), f in any::<u64>(), lo in 0u32..=65536, hi in 0u32..=65536) {
        let a = Sampler { seed };
        let b = Sampler { seed };
        prop_assert_eq!(a.hash16(f), b.hash16(f));
        let (lo, hi) = (lo.min(hi), lo.max(hi));
        if a.is_sampled(f, lo) {
            prop_assert!(a.is_sampled(f, hi));
        }
        prop_assert!(!a.is_sampled(f, 0));
        prop_assert!(a.is_sampled(f, 65536));
    }
}

#[test]
fn roomy_sketches_decode_almost_always() {
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    let mut failures = 0;
    for _ in 0..2000 {
        let (seed, ups) = (any::<u64>(), updates()).new_tree(&mut runner).unwrap().current();
        if !build(&params(64, seed), &ups).decode().is_success() {
            failures += 1;
        }
    }
    // two flows sharing all three buckets happen at roughly C(24,2)/64^3
    assert!(failures <= 10, "{failures}");
}
