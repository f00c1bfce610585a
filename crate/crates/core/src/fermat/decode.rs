use std::collections::{HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::FermatSketch;
use crate::flowset::Flowset;

/// `(flow, frequency)` doublets that verification must reject for the rest
/// of one decode call, each pinned to the bucket it was read from.
#[derive(Debug, Clone, Default)]
pub struct Blocklist {
    doublets: HashSet<(u64, i64, usize, usize)>,
}

impl Blocklist {
    /// Blocks reading `(flow, frequency)` from bucket `(i, j)`.
    pub fn insert(&mut self, flow: u64, frequency: i64, i: usize, j: usize) {
        self.doublets.insert((flow, frequency, i, j));
    }

    pub fn contains(&self, flow: u64, frequency: i64, i: usize, j: usize) -> bool {
        !self.doublets.is_empty() && self.doublets.contains(&(flow, frequency, i, j))
    }

    pub fn len(&self) -> usize {
        self.doublets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doublets.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeStatus {
    Success,
    Failure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeOutcome {
    pub status: DecodeStatus,
    pub flowset: Flowset,
    pub residual_nonzero_buckets: usize,
    /// Flows that were extracted and later cancelled by an opposite
    /// extraction, with the frequency of the first extraction.
    pub blocklist_events: Vec<(u64, i64)>,
    /// Queue pops performed.
    pub pops: u64,
}

impl DecodeOutcome {
    pub fn is_success(&self) -> bool {
        self.status == DecodeStatus::Success
    }
}

/// Peeling decoder.
///
/// Every non-zero bucket is queued; each popped bucket that verifies as pure
/// has its flow extracted from all `d` mapped buckets, and the other touched
/// buckets are queued again. A flow whose extractions cancel out is dropped
/// from the result. Either of its last two reads may have been the false
/// positive, so both doublets are blocklisted at the buckets they came from;
/// the flow can still be read from its remaining buckets. Peeling stops when
/// the queue drains or after
/// `4 * d * m` consecutive pops without an extraction. Extractions are also
/// bounded by `8 * d * m`, which a sketch built from real updates never
/// approaches.
pub fn decode(sketch: &FermatSketch) -> DecodeOutcome {
    let mut work = sketch.clone();
    let d = work.arrays();
    let m = work.width();
    let cap = 4 * (d as u64) * (m as u64);
    let extraction_cap = 2 * cap;
    let mut extractions = 0u64;

    let mut queue: VecDeque<(usize, usize)> = VecDeque::with_capacity(d * m);
    for i in 0..d {
        for j in 0..m {
            if !work.bucket(i, j).is_zero() {
                queue.push_back((i, j));
            }
        }
    }

    let mut flowset = Flowset::new();
    let mut blocklist = Blocklist::default();
    let mut events = Vec::new();
    let mut last_read: HashMap<u64, (usize, usize, i64)> = HashMap::new();
    let mut pops = 0u64;
    let mut idle = 0u64;

    while let Some((i, j)) = queue.pop_front() {
        pops += 1;
        idle += 1;
        if idle > cap {
            break;
        }
        let Some((flow, n)) = work.is_pure(i, j, &blocklist) else {
            continue;
        };
        idle = 0;
        extractions += 1;
        if extractions > extraction_cap {
            break;
        }
        work.apply(flow, -n);
        let before = flowset.get(flow);
        let previous = last_read.insert(flow, (i, j, n));
        if flowset.add(flow, n) == 0 {
            // either read may have been the false positive
            if let Some((pi, pj, pn)) = previous {
                blocklist.insert(flow, pn, pi, pj);
            }
            blocklist.insert(flow, n, i, j);
            events.push((flow, before));
        }
        for i2 in 0..d {
            if i2 == i {
                continue;
            }
            let j2 = work.params().index(i2, flow);
            if !work.bucket(i2, j2).is_zero() {
                queue.push_back((i2, j2));
            }
        }
    }

    let residual = work.nonzero_buckets();
    DecodeOutcome {
        status: if residual == 0 { DecodeStatus::Success } else { DecodeStatus::Failure },
        flowset,
        residual_nonzero_buckets: residual,
        blocklist_events: events,
        pops,
    }
}
