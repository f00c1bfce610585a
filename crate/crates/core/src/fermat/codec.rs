//! Versioned dumps of a [`FermatSketch`] for collection by the controller.
//!
//! Binary layout, all integers little-endian:
//!
//! ```text
//! magic        4 bytes  "FSKT"
//! version      u16
//! arrays       u32
//! buckets      u32
//! prime        u64
//! fp_bits      u8
//! fp_seed      u64
//! seeds        arrays x u64
//! grid         arrays x buckets x (count i64, idsum u64), row-major
//! ```

use serde::{Deserialize, Serialize};

use super::{FermatBucket, FermatParams, FermatSketch};
use crate::error::{Error, Result};

pub const FERMAT_DUMP_VERSION: u16 = 1;
const MAGIC: &[u8; 4] = b"FSKT";

/// JSON form of a sketch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FermatDump {
    pub version: u16,
    pub params: FermatParams,
    pub buckets: Vec<FermatBucket>,
}

impl FermatDump {
    pub fn into_sketch(self) -> Result<FermatSketch> {
        if self.version != FERMAT_DUMP_VERSION {
            return Err(Error::Codec(format!("unsupported dump version {}", self.version)));
        }
        let p = self.params;
        // re-run validation on untrusted parameters
        let params = FermatParams::with_fingerprint(
            p.arrays,
            p.buckets,
            p.prime,
            p.seeds,
            p.fingerprint_bits,
            p.fingerprint_seed,
        )?;
        FermatSketch::from_buckets(params, self.buckets)
    }
}

impl From<&FermatSketch> for FermatDump {
    fn from(s: &FermatSketch) -> Self {
        FermatDump { version: FERMAT_DUMP_VERSION, params: s.params().clone(), buckets: s.grid().to_vec() }
    }
}

impl Serialize for FermatSketch {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        FermatDump::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for FermatSketch {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        FermatDump::deserialize(deserializer)?.into_sketch().map_err(serde::de::Error::custom)
    }
}

impl FermatSketch {
    pub fn to_bytes(&self) -> Vec<u8> {
        let p = self.params();
        let mut out = Vec::with_capacity(31 + 8 * p.arrays() + 16 * self.grid().len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FERMAT_DUMP_VERSION.to_le_bytes());
        out.extend_from_slice(&(p.arrays() as u32).to_le_bytes());
        out.extend_from_slice(&(p.buckets() as u32).to_le_bytes());
        out.extend_from_slice(&p.prime().to_le_bytes());
        out.push(p.fingerprint_bits() as u8);
        out.extend_from_slice(&p.fingerprint_seed().to_le_bytes());
        for s in p.seeds() {
            out.extend_from_slice(&s.to_le_bytes());
        }
        for b in self.grid() {
            out.extend_from_slice(&b.count.to_le_bytes());
            out.extend_from_slice(&b.idsum.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Codec("bad magic".into()));
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != FERMAT_DUMP_VERSION {
            return Err(Error::Codec(format!("unsupported dump version {version}")));
        }
        let arrays = u32::from_le_bytes(r.array()?) as usize;
        let buckets = u32::from_le_bytes(r.array()?) as usize;
        let prime = u64::from_le_bytes(r.array()?);
        let fp_bits = r.take(1)?[0] as u32;
        let fp_seed = u64::from_le_bytes(r.array()?);
        let expected = arrays
            .checked_mul(8)
            .and_then(|s| arrays.checked_mul(buckets)?.checked_mul(16)?.checked_add(s))
            .ok_or_else(|| Error::Codec("dimensions overflow".into()))?;
        if r.remaining() != expected {
            return Err(Error::Codec(format!("expected {expected} payload bytes, found {}", r.remaining())));
        }
        let seeds = (0..arrays).map(|_| r.array().map(u64::from_le_bytes)).collect::<Result<Vec<_>>>()?;
        let params = FermatParams::with_fingerprint(arrays, buckets, prime, seeds, fp_bits, fp_seed)?;
        let mut grid = Vec::with_capacity(arrays * buckets);
        for _ in 0..arrays * buckets {
            let count = i64::from_le_bytes(r.array()?);
            let idsum = u64::from_le_bytes(r.array()?);
            grid.push(FermatBucket { count, idsum });
        }
        FermatSketch::from_buckets(params, grid)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Codec("truncated dump".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}
