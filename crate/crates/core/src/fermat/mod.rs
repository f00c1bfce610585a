//! FermatSketch: an invertible counting sketch over a prime field.
//!
//! The sketch is a grid of `d` arrays with `m` buckets each. A bucket keeps a
//! signed packet count and the sum of the (extended) flow ids it saw, weighted
//! by frequency, modulo a prime `p`. Because `p` is prime, a bucket holding a
//! single flow reveals that flow's id as `idsum * count^(p-2) mod p`, which
//! drives the peeling decoder in [`decode`].
//!
//! Sketches with identical parameters form a group under bucket-wise
//! addition, so the difference of an upstream and a downstream sketch encodes
//! exactly the packets lost between them.

mod codec;
mod decode;

pub use codec::{FermatDump, FERMAT_DUMP_VERSION};
pub use decode::{Blocklist, DecodeOutcome, DecodeStatus};

use serde::{Deserialize, Serialize};

use crate::cardinality::{linear_count, LinearCount};
use crate::error::{Error, Result};
use crate::hash::{derive_seeds, keyed_hash};
use crate::modular::{self, add_mod, is_prime, mul_mod, reduce_signed, sub_mod, MERSENNE_61};

/// Number of bucket arrays used unless configured otherwise.
pub const DEFAULT_ARRAYS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FermatParams {
    arrays: usize,
    buckets: usize,
    prime: u64,
    seeds: Vec<u64>,
    fingerprint_bits: u32,
    fingerprint_seed: u64,
}

impl FermatParams {
    pub fn new(arrays: usize, buckets: usize, prime: u64, seeds: Vec<u64>) -> Result<Self> {
        Self::with_fingerprint(arrays, buckets, prime, seeds, 0, 0)
    }

    /// `d` arrays of `m` buckets over 2^61 - 1, seeds derived from `root_seed`.
    pub fn from_seed(arrays: usize, buckets: usize, root_seed: u64) -> Result<Self> {
        Self::new(arrays, buckets, MERSENNE_61, derive_seeds(root_seed, arrays))
    }

    pub fn with_fingerprint(
        arrays: usize,
        buckets: usize,
        prime: u64,
        seeds: Vec<u64>,
        fingerprint_bits: u32,
        fingerprint_seed: u64,
    ) -> Result<Self> {
        if arrays < 2 {
            return Err(Error::InvalidParams(format!("need at least 2 arrays, got {arrays}")));
        }
        if buckets < 1 {
            return Err(Error::InvalidParams("need at least 1 bucket per array".into()));
        }
        if seeds.len() != arrays {
            return Err(Error::InvalidParams(format!("{} seeds for {arrays} arrays", seeds.len())));
        }
        for i in 0..seeds.len() {
            if seeds[i + 1..].contains(&seeds[i]) {
                return Err(Error::InvalidParams("hash seeds must be pairwise distinct".into()));
            }
        }
        if !is_prime(prime) {
            return Err(Error::InvalidParams(format!("modulus {prime} is not prime")));
        }
        if fingerprint_bits > 32 || (prime >> fingerprint_bits) < 2 {
            return Err(Error::InvalidParams(format!(
                "{fingerprint_bits}-bit fingerprints leave no id space below {prime}"
            )));
        }
        Ok(Self { arrays, buckets, prime, seeds, fingerprint_bits, fingerprint_seed })
    }

    /// Same hashing and field, different bucket count.
    pub fn resized(&self, buckets: usize) -> Result<Self> {
        if buckets < 1 {
            return Err(Error::InvalidParams("need at least 1 bucket per array".into()));
        }
        Ok(Self { buckets, ..self.clone() })
    }

    pub fn arrays(&self) -> usize {
        self.arrays
    }

    pub fn buckets(&self) -> usize {
        self.buckets
    }

    pub fn prime(&self) -> u64 {
        self.prime
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    pub fn fingerprint_bits(&self) -> u32 {
        self.fingerprint_bits
    }

    pub fn fingerprint_seed(&self) -> u64 {
        self.fingerprint_seed
    }

    /// Exclusive upper bound on admissible flow ids.
    pub fn id_limit(&self) -> u64 {
        self.prime >> self.fingerprint_bits
    }

    /// Full 64-bit hash of `flow` for array `i`; bucket index is this modulo `m`.
    #[inline]
    pub fn base_hash(&self, i: usize, flow: u64) -> u64 {
        keyed_hash(flow, self.seeds[i])
    }

    #[inline]
    pub fn index(&self, i: usize, flow: u64) -> usize {
        (self.base_hash(i, flow) % self.buckets as u64) as usize
    }

    #[inline]
    fn fingerprint(&self, flow: u64) -> u64 {
        if self.fingerprint_bits == 0 {
            0
        } else {
            keyed_hash(flow, self.fingerprint_seed) & ((1u64 << self.fingerprint_bits) - 1)
        }
    }

    /// The value summed into `idsum`: the flow id, with its fingerprint
    /// appended in the low bits when fingerprinting is on.
    #[inline]
    pub fn extended_id(&self, flow: u64) -> u64 {
        (flow << self.fingerprint_bits) | self.fingerprint(flow)
    }

    /// Checks whether `bucket`, read at position `(i, j)`, holds a single
    /// flow, and returns that flow and its count.
    pub fn verify(&self, i: usize, j: usize, bucket: FermatBucket) -> Option<(u64, i64)> {
        if bucket.is_zero() {
            return None;
        }
        let c = reduce_signed(bucket.count, self.prime);
        let inv = modular::mod_inverse(c, self.prime).ok()?;
        let flow = self.split_extended(mul_mod(bucket.idsum, inv, self.prime))?;
        (self.index(i, flow) == j).then_some((flow, bucket.count))
    }

    /// Splits an extended id and checks its fingerprint.
    #[inline]
    fn split_extended(&self, ext: u64) -> Option<u64> {
        if self.fingerprint_bits == 0 {
            return Some(ext);
        }
        let flow = ext >> self.fingerprint_bits;
        let fp = ext & ((1u64 << self.fingerprint_bits) - 1);
        (fp == self.fingerprint(flow)).then_some(flow)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FermatBucket {
    pub count: i64,
    pub idsum: u64,
}

impl FermatBucket {
    #[inline]
    pub fn is_zero(&self) -> bool {
        self.count == 0 && self.idsum == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FermatSketch {
    params: FermatParams,
    buckets: Vec<FermatBucket>,
}

impl FermatSketch {
    pub fn new(params: FermatParams) -> Self {
        let n = params.arrays * params.buckets;
        Self { params, buckets: vec![FermatBucket::default(); n] }
    }

    /// Builds a sketch from a row-major bucket grid.
    pub fn from_buckets(params: FermatParams, buckets: Vec<FermatBucket>) -> Result<Self> {
        if buckets.len() != params.arrays * params.buckets {
            return Err(Error::InvalidParams(format!(
                "expected {} buckets, got {}",
                params.arrays * params.buckets,
                buckets.len()
            )));
        }
        if let Some(b) = buckets.iter().find(|b| b.idsum >= params.prime) {
            return Err(Error::InvalidParams(format!("idsum {} not below the modulus", b.idsum)));
        }
        Ok(Self { params, buckets })
    }

    pub fn params(&self) -> &FermatParams {
        &self.params
    }

    pub fn arrays(&self) -> usize {
        self.params.arrays
    }

    pub fn width(&self) -> usize {
        self.params.buckets
    }

    pub fn bucket(&self, i: usize, j: usize) -> FermatBucket {
        self.buckets[i * self.params.buckets + j]
    }

    pub fn row(&self, i: usize) -> &[FermatBucket] {
        let m = self.params.buckets;
        &self.buckets[i * m..(i + 1) * m]
    }

    /// Row-major view of the whole grid.
    pub fn grid(&self) -> &[FermatBucket] {
        &self.buckets
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.iter().all(FermatBucket::is_zero)
    }

    pub fn nonzero_buckets(&self) -> usize {
        self.buckets.iter().filter(|b| !b.is_zero()).count()
    }

    pub fn clear(&mut self) {
        self.buckets.iter_mut().for_each(|b| *b = FermatBucket::default());
    }

    /// Adds `n` packets of `flow`. Negative `n` deletes.
    pub fn update(&mut self, flow: u64, n: i64) -> Result<()> {
        let limit = self.params.id_limit();
        if flow >= limit {
            return Err(Error::IdOutOfRange { id: flow, limit });
        }
        if n != 0 {
            self.apply(flow, n);
        }
        Ok(())
    }

    #[inline]
    pub fn insert(&mut self, flow: u64) -> Result<()> {
        self.update(flow, 1)
    }

    #[inline]
    fn apply(&mut self, flow: u64, n: i64) {
        let p = self.params.prime;
        let weighted = mul_mod(reduce_signed(n, p), self.params.extended_id(flow), p);
        let m = self.params.buckets;
        for i in 0..self.params.arrays {
            let j = self.params.index(i, flow);
            let b = &mut self.buckets[i * m + j];
            b.count += n;
            debug_assert!(b.count.unsigned_abs() < p, "bucket count reached the modulus");
            b.idsum = add_mod(b.idsum, weighted, p);
        }
    }

    fn check_compatible(&self, other: &FermatSketch) -> Result<()> {
        if self.params != other.params {
            return Err(Error::IncompatibleSketches);
        }
        Ok(())
    }

    /// In-place `self += other` or `self -= other`.
    pub fn merge(&mut self, other: &FermatSketch, sign: Sign) -> Result<()> {
        self.check_compatible(other)?;
        let p = self.params.prime;
        for (a, b) in self.buckets.iter_mut().zip(&other.buckets) {
            match sign {
                Sign::Plus => {
                    a.count += b.count;
                    a.idsum = add_mod(a.idsum, b.idsum, p);
                }
                Sign::Minus => {
                    a.count -= b.count;
                    a.idsum = sub_mod(a.idsum, b.idsum, p);
                }
            }
        }
        Ok(())
    }

    /// Bucket-wise sum or difference of two sketches with equal parameters.
    pub fn combine(a: &FermatSketch, b: &FermatSketch, sign: Sign) -> Result<FermatSketch> {
        let mut out = a.clone();
        out.merge(b, sign)?;
        Ok(out)
    }

    /// Shrinks every array to `m / k` buckets by summing buckets `j + t*m/k`.
    /// The result indexes flows by `hash mod (m/k)`, which equals encoding the
    /// same stream directly into the smaller sketch.
    pub fn fold(&self, k: usize) -> Result<FermatSketch> {
        let m = self.params.buckets;
        if k == 0 || !m.is_multiple_of(k) {
            return Err(Error::FoldIndivisible { m, k });
        }
        let narrow = m / k;
        let p = self.params.prime;
        let mut out = FermatSketch::new(self.params.resized(narrow)?);
        for i in 0..self.params.arrays {
            for (j, b) in self.row(i).iter().enumerate() {
                let dst = &mut out.buckets[i * narrow + j % narrow];
                dst.count += b.count;
                dst.idsum = add_mod(dst.idsum, b.idsum, p);
            }
        }
        Ok(out)
    }

    /// Pure-bucket verification of bucket `(i, j)`.
    ///
    /// Recovers the candidate id from the bucket, then requires that it hashes
    /// back to `j` in array `i`, that its fingerprint (if any) matches, and that
    /// the `(flow, count)` doublet is not blocklisted.
    pub fn is_pure(&self, i: usize, j: usize, blocklist: &Blocklist) -> Option<(u64, i64)> {
        let (flow, n) = self.params.verify(i, j, self.bucket(i, j))?;
        (!blocklist.contains(flow, n, i, j)).then_some((flow, n))
    }

    /// Peels the sketch; see [`decode::decode`].
    pub fn decode(&self) -> DecodeOutcome {
        decode::decode(self)
    }

    /// Linear-counting estimate of the distinct flows in the sketch, read
    /// from array `i`.
    pub fn linear_count(&self, i: usize) -> LinearCount {
        let zeros = self.row(i).iter().filter(|b| b.is_zero()).count();
        linear_count(zeros, self.params.buckets)
    }

    /// Sum of counts in array `i`.
    pub fn array_total(&self, i: usize) -> i64 {
        self.row(i).iter().map(|b| b.count).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(d: usize, m: usize, p: u64) -> FermatParams {
        FermatParams::new(d, m, p, derive_seeds(99, d)).unwrap()
    }

    #[test]
    fn rejects_bad_params() {
        assert!(FermatParams::new(1, 8, 31, vec![1]).is_err());
        assert!(FermatParams::new(3, 0, 31, vec![1, 2, 3]).is_err());
        assert!(FermatParams::new(3, 8, 32, vec![1, 2, 3]).is_err());
        assert!(FermatParams::new(3, 8, 31, vec![1, 2, 2]).is_err());
        assert!(FermatParams::new(3, 8, 31, vec![1, 2]).is_err());
        assert!(FermatParams::with_fingerprint(3, 8, 31, vec![1, 2, 3], 8, 0).is_err());
    }

    #[test]
    fn encoding_example_mod_11() {
        let mut s = FermatSketch::new(params(2, 1, 11));
        // seed both buckets with (count 1, idsum 4): one packet of flow 4
        s.update(4, 1).unwrap();
        assert_eq!(s.bucket(0, 0), FermatBucket { count: 1, idsum: 4 });
        s.update(8, 1).unwrap();
        assert_eq!(s.bucket(0, 0), FermatBucket { count: 2, idsum: 1 });
        assert_eq!(s.bucket(1, 0), FermatBucket { count: 2, idsum: 1 });
    }

    #[test]
    fn weighted_update_mod_31() {
        let mut s = FermatSketch::new(params(3, 4, 31));
        s.update(24, 3).unwrap();
        for i in 0..3 {
            assert_eq!(s.bucket(i, s.params().index(i, 24)), FermatBucket { count: 3, idsum: 10 });
        }
    }

    #[test]
    fn out_of_range_id() {
        let mut s = FermatSketch::new(params(3, 4, 31));
        assert_eq!(s.update(31, 1), Err(Error::IdOutOfRange { id: 31, limit: 31 }));
        let fp = FermatParams::with_fingerprint(3, 4, MERSENNE_61, vec![1, 2, 3], 8, 5).unwrap();
        assert_eq!(fp.id_limit(), MERSENNE_61 >> 8);
        let mut s = FermatSketch::new(fp);
        assert!(s.update(MERSENNE_61 >> 8, 1).is_err());
        assert!(s.update((MERSENNE_61 >> 8) - 1, 1).is_ok());
    }

    #[test]
    fn update_then_inverse_restores_grid() {
        let mut s = FermatSketch::new(params(3, 16, MERSENNE_61));
        s.update(77, 5).unwrap();
        let before = s.clone();
        s.update(1234, 1).unwrap();
        s.update(1234, -1).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn pure_bucket_recovers_flow() {
        let mut s = FermatSketch::new(params(3, 4, 31));
        s.update(24, 3).unwrap();
        let j = s.params().index(1, 24);
        assert_eq!(s.is_pure(1, j, &Blocklist::default()), Some((24, 3)));
    }

    #[test]
    fn count_multiple_of_prime_is_not_pure() {
        let p = 31u64;
        let prm = params(3, 4, p);
        for k in 1..4i64 {
            let mut grid = vec![FermatBucket::default(); 12];
            grid[0] = FermatBucket { count: k * p as i64, idsum: 17 };
            let s = FermatSketch::from_buckets(prm.clone(), grid).unwrap();
            assert_eq!(s.is_pure(0, 0, &Blocklist::default()), None);
        }
    }

    #[test]
    fn zero_bucket_is_not_pure() {
        let s = FermatSketch::new(params(3, 4, 31));
        assert_eq!(s.is_pure(0, 0, &Blocklist::default()), None);
    }

    #[test]
    fn negative_count_bucket_is_pure() {
        let mut s = FermatSketch::new(params(3, 8, MERSENNE_61));
        s.update(4242, -7).unwrap();
        let j = s.params().index(2, 4242);
        assert_eq!(s.is_pure(2, j, &Blocklist::default()), Some((4242, -7)));
    }

    #[test]
    fn blocklisted_doublet_is_rejected() {
        let mut s = FermatSketch::new(params(3, 8, MERSENNE_61));
        s.update(9, 2).unwrap();
        let j = s.params().index(0, 9);
        let mut bl = Blocklist::default();
        bl.insert(9, 2, 0, j);
        assert_eq!(s.is_pure(0, j, &bl), None);
        bl.insert(9, 2, 1, s.params().index(1, 9));
        assert_eq!(s.is_pure(2, s.params().index(2, 9), &bl), Some((9, 2)));
    }

    #[test]
    fn fingerprinted_flow_roundtrip() {
        let prm = FermatParams::with_fingerprint(3, 8, MERSENNE_61, derive_seeds(1, 3), 8, 77).unwrap();
        let mut s = FermatSketch::new(prm);
        s.update(123_456, 4).unwrap();
        let j = s.params().index(0, 123_456);
        assert_eq!(s.is_pure(0, j, &Blocklist::default()), Some((123_456, 4)));
    }

    #[test]
    fn combine_requires_equal_params() {
        let a = FermatSketch::new(params(3, 8, 31));
        let b = FermatSketch::new(params(3, 16, 31));
        assert_eq!(FermatSketch::combine(&a, &b, Sign::Plus), Err(Error::IncompatibleSketches));
    }

    #[test]
    fn self_subtraction_is_zero() {
        let mut a = FermatSketch::new(params(3, 8, MERSENNE_61));
        for f in 0..20 {
            a.update(f, f as i64 + 1).unwrap();
        }
        assert!(FermatSketch::combine(&a, &a, Sign::Minus).unwrap().is_empty());
    }

    #[test]
    fn loss_of_one_packet_decodes() {
        let prm = params(3, 8, MERSENNE_61);
        let mut up = FermatSketch::new(prm.clone());
        let mut down = FermatSketch::new(prm);
        up.update(8, 3).unwrap();
        down.update(8, 2).unwrap();
        let delta = FermatSketch::combine(&up, &down, Sign::Minus).unwrap();
        let out = delta.decode();
        assert!(out.is_success());
        assert_eq!(out.flowset.iter().collect::<Vec<_>>(), vec![(8, 1)]);
    }

    #[test]
    fn fold_by_one_is_identity() {
        let mut s = FermatSketch::new(params(3, 12, MERSENNE_61));
        for f in 0..30 {
            s.insert(f).unwrap();
        }
        assert_eq!(s.fold(1).unwrap(), s);
        assert_eq!(s.fold(5), Err(Error::FoldIndivisible { m: 12, k: 5 }));
        assert_eq!(s.fold(0), Err(Error::FoldIndivisible { m: 12, k: 0 }));
    }

    #[test]
    fn fold_index_arithmetic() {
        // a flow at index 5 of 6 lands at 5 mod 3 = 2 after folding by 2
        let prm = params(3, 6, MERSENNE_61);
        let flow = (0..10_000u64).find(|&f| prm.index(0, f) == 5).unwrap();
        let mut s = FermatSketch::new(prm);
        s.insert(flow).unwrap();
        let folded = s.fold(2).unwrap();
        assert_eq!(folded.bucket(0, 2).count, 1);
        assert_eq!(folded.params().index(0, flow), 2);
    }

    #[test]
    fn fold_matches_replay() {
        let big = params(3, 1024, MERSENNE_61);
        let small = big.resized(256).unwrap();
        let mut a = FermatSketch::new(big);
        let mut b = FermatSketch::new(small);
        for f in 0..3000u64 {
            let n = (f % 7) as i64 - 3;
            a.update(f * 7919, n).unwrap();
            b.update(f * 7919, n).unwrap();
        }
        assert_eq!(a.fold(4).unwrap(), b);
    }
}
