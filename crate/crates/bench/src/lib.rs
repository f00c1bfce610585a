//! Fixtures shared by the benchmarks.

use sketchmon_core::hash::{derive_seed, mix64};
use sketchmon_core::{FermatParams, FermatSketch};

/// `n` distinct flow ids below 2^40.
pub fn flow_ids(n: usize, seed: u64) -> Vec<u64> {
    let salt = derive_seed(seed, 0);
    (0..n as u64).map(|i| (mix64(i ^ salt) >> 24) | 1).collect()
}

/// A three-array sketch of `m` buckets per array holding `n` unit flows.
pub fn loaded_sketch(m: usize, n: usize, seed: u64) -> FermatSketch {
    let mut s = FermatSketch::new(FermatParams::from_seed(3, m, seed).expect("valid params"));
    for f in flow_ids(n, seed) {
        s.insert(f).expect("id in range");
    }
    s
}
