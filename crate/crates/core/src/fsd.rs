//! Flow-size distributions: EM recovery from counter arrays, entropy, and
//! threshold selection from a size histogram.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::tower::TowerSketch;

/// Estimated number of flows per size. Counts may be fractional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SizeDistribution {
    counts: BTreeMap<u64, f64>,
}

impl SizeDistribution {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_sizes<I: IntoIterator<Item = u64>>(sizes: I) -> Self {
        let mut d = Self::new();
        for s in sizes {
            d.add(s, 1.0);
        }
        d
    }

    pub fn add(&mut self, size: u64, flows: f64) {
        if size == 0 || flows == 0.0 {
            return;
        }
        *self.counts.entry(size).or_insert(0.0) += flows;
    }

    pub fn get(&self, size: u64) -> f64 {
        self.counts.get(&size).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.counts.iter().map(|(&s, &n)| (s, n))
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn max_size(&self) -> Option<u64> {
        self.counts.keys().next_back().copied()
    }

    pub fn total_flows(&self) -> f64 {
        self.counts.values().sum()
    }

    pub fn total_packets(&self) -> f64 {
        self.counts.iter().map(|(&s, &n)| s as f64 * n).sum()
    }

    /// Number of flows with size at least `t`.
    pub fn ccdf(&self, t: u64) -> f64 {
        self.counts.range(t..).map(|(_, &n)| n).sum()
    }

    /// The part of the distribution with sizes in `[lo, hi)`.
    pub fn restrict(&self, lo: u64, hi: u64) -> Self {
        Self { counts: self.counts.range(lo..hi).map(|(&s, &n)| (s, n)).collect() }
    }

    pub fn merge(&mut self, other: &SizeDistribution) {
        for (s, n) in other.iter() {
            self.add(s, n);
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { counts: self.counts.iter().map(|(&s, &n)| (s, n * factor)).collect() }
    }

    /// `-Σ n_i (i/N) ln(i/N)` with `N` the total packet count.
    pub fn entropy(&self) -> f64 {
        let total = self.total_packets();
        if total <= 0.0 {
            return 0.0;
        }
        self.counts
            .iter()
            .map(|(&s, &n)| {
                let p = s as f64 / total;
                -n * p * p.ln()
            })
            .sum()
    }

    /// Weighted mean relative error against a reference distribution.
    pub fn wmre(&self, truth: &SizeDistribution) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        let sizes: std::collections::BTreeSet<u64> = self.counts.keys().chain(truth.counts.keys()).copied().collect();
        for s in sizes {
            let a = self.get(s);
            let b = truth.get(s);
            num += (a - b).abs();
            den += (a + b) / 2.0;
        }
        if den == 0.0 {
            0.0
        } else {
            num / den
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self { max_iterations: 50, tolerance: 1e-4 }
    }
}

/// How many flows a counter of value `v` may be split into. Small values
/// are where deep collisions are likely and cheap to enumerate.
fn max_parts(v: u32) -> usize {
    match v {
        0..=16 => 5,
        17..=32 => 4,
        33..=64 => 3,
        _ => 2,
    }
}

/// A multiset of flow sizes summing to a counter value, with the
/// `1 / Π k_s!` factor of its repeated sizes.
#[derive(Debug, Clone)]
struct Partition {
    parts: Vec<u32>,
    factor: f64,
}

fn partitions(v: u32, depth: usize) -> Vec<Partition> {
    fn walk(rest: u32, min: u32, depth: usize, cur: &mut Vec<u32>, out: &mut Vec<Partition>) {
        if rest == 0 {
            let mut factor = 1.0;
            let mut run = 1.0;
            for w in cur.windows(2) {
                if w[0] == w[1] {
                    run += 1.0;
                    factor /= run;
                } else {
                    run = 1.0;
                }
            }
            out.push(Partition { parts: cur.clone(), factor });
            return;
        }
        if depth == 0 {
            return;
        }
        for p in min..=rest {
            if p < rest && rest - p < p {
                // the remainder cannot keep the sequence non-decreasing
                continue;
            }
            cur.push(p);
            walk(rest - p, p, depth - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    walk(v, 1, depth, &mut Vec::new(), &mut out);
    out
}

/// EM estimate of the sizes of flows hashed into `counters`, using only
/// values in `1..limit` (values at or above `limit` are overflowed).
pub fn mrac(counters: &[u32], limit: u32, cfg: &EmConfig) -> SizeDistribution {
    let m = counters.len() as f64;
    let top = limit as usize;
    let mut hist = vec![0f64; top];
    for &c in counters {
        if c >= 1 && c < limit {
            hist[c as usize] += 1.0;
        }
    }
    let mut est = hist.clone();
    let mut n: f64 = est.iter().sum();
    if n == 0.0 {
        return SizeDistribution::new();
    }
    let parts: Vec<Vec<Partition>> = (0..top as u32)
        .map(|v| if v == 0 || hist[v as usize] == 0.0 { Vec::new() } else { partitions(v, max_parts(v)) })
        .collect();

    for _ in 0..cfg.max_iterations {
        let lambda: Vec<f64> = est.iter().map(|&k| k / m).collect();
        let mut next = vec![0f64; top];
        let mut weights = Vec::new();
        for v in 1..top {
            if hist[v] == 0.0 {
                continue;
            }
            weights.clear();
            let mut total = 0.0;
            for p in &parts[v] {
                let w = p.parts.iter().fold(p.factor, |acc, &s| acc * lambda[s as usize]);
                weights.push(w);
                total += w;
            }
            if total <= 0.0 {
                // no explanation under the current estimate: keep it as one flow
                next[v] += hist[v];
                continue;
            }
            for (p, w) in parts[v].iter().zip(&weights) {
                let share = hist[v] * w / total;
                for &s in &p.parts {
                    next[s as usize] += share;
                }
            }
        }
        let next_n: f64 = next.iter().sum();
        let change: f64 = next.iter().zip(&est).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
        est = next;
        n = next_n;
        if change < cfg.tolerance {
            break;
        }
    }

    let mut d = SizeDistribution::new();
    for (s, &k) in est.iter().enumerate() {
        if k > 1e-6 {
            d.add(s as u64, k);
        }
    }
    d
}

/// Size distribution from a classifier: EM on the first level, counters of
/// each higher level inside its own value range taken as single flows, and
/// sizes beyond the last level supplied by `tail`.
pub fn tower_fsd(tower: &TowerSketch, tail: &[u64], cfg: &EmConfig) -> SizeDistribution {
    let levels = tower.config().levels();
    let mut d = mrac(tower.level(0), levels[0].max_value(), cfg);
    for i in 1..levels.len() {
        let lo = levels[i - 1].max_value();
        let hi = levels[i].max_value();
        for &c in tower.level(i) {
            if c >= lo && c < hi {
                d.add(c as u64, 1.0);
            }
        }
    }
    let cut = levels[levels.len() - 1].max_value() as u64;
    for &s in tail {
        if s >= cut {
            d.add(s, 1.0);
        }
    }
    d
}

/// Smallest `T` with at most `capacity` flows of size `T` or more.
pub fn choose_threshold(fsd: &SizeDistribution, capacity: f64) -> u64 {
    const EPS: f64 = 1e-9;
    let total = fsd.total_flows();
    if total <= capacity + EPS {
        return 1;
    }
    let mut below = 0.0;
    for (s, n) in fsd.iter() {
        below += n;
        if total - below <= capacity + EPS {
            return s + 1;
        }
    }
    fsd.max_size().map_or(1, |s| s + 1)
}
