//! Keyed 64-bit hashing shared by every sketch in the crate.
//!
//! All switches of one deployment derive their seeds from a single experiment
//! seed, so the same flow lands in the same bucket everywhere.

/// Finalizer of splitmix64. A bijection on `u64` with full avalanche.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Keyed hash of `key` under `seed`.
#[inline]
pub fn keyed_hash(key: u64, seed: u64) -> u64 {
    mix64(key ^ mix64(seed ^ 0x5851_F42D_4C95_7F2D))
}

/// Derives the `index`-th sub-seed from a root seed.
pub fn derive_seed(root: u64, index: u64) -> u64 {
    mix64(mix64(root).wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03)))
}

/// Derives `n` pairwise-distinct sub-seeds from a root seed.
pub fn derive_seeds(root: u64, n: usize) -> Vec<u64> {
    let mut out: Vec<u64> = Vec::with_capacity(n);
    let mut i = 0u64;
    while out.len() < n {
        let s = derive_seed(root, i);
        if !out.contains(&s) {
            out.push(s);
        }
        i += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_are_distinct_and_stable() {
        let a = derive_seeds(7, 8);
        let b = derive_seeds(7, 8);
        assert_eq!(a, b);
        for i in 0..a.len() {
            for j in i + 1..a.len() {
                assert_ne!(a[i], a[j]);
            }
        }
    }

    #[test]
    fn keyed_hash_spreads_low_bits() {
        let m = 64u64;
        let mut hist = vec![0u32; m as usize];
        for k in 0..64_000u64 {
            hist[(keyed_hash(k, 42) % m) as usize] += 1;
        }
        // expected 1000 per cell; 5 sigma is ~160
        assert!(hist.iter().all(|&c| (840..=1160).contains(&c)), "{hist:?}");
    }
}
