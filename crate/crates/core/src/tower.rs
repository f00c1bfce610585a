//! TowerSketch flow classifier.
//!
//! A stack of counter arrays with growing counter widths and equal memory per
//! level. Every level counts every packet, saturating at its maximum, and a
//! query returns the smallest non-saturated mapped counter. The post-insertion
//! estimate sorts each packet into a hierarchy used by the flow encoders.

use serde::{Deserialize, Serialize};

use crate::cardinality::{linear_count, LinearCount};
use crate::error::{Error, Result};
use crate::hash::{derive_seed, keyed_hash};

pub const TOWER_DUMP_VERSION: u16 = 1;

/// Sampling verdicts are drawn from a 16-bit hash range.
pub const SAMPLE_RANGE: u32 = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TowerLevel {
    pub width: usize,
    pub bits: u32,
    pub seed: u64,
}

impl TowerLevel {
    pub fn max_value(&self) -> u32 {
        if self.bits == 32 {
            u32::MAX
        } else {
            (1u32 << self.bits) - 1
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TowerConfig {
    levels: Vec<TowerLevel>,
}

impl TowerConfig {
    pub fn new(levels: Vec<TowerLevel>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidTower("at least one level is required".into()));
        }
        for l in &levels {
            if l.width == 0 || l.bits == 0 || l.bits > 32 {
                return Err(Error::InvalidTower(format!("bad level {}x{}-bit", l.width, l.bits)));
            }
        }
        for w in levels.windows(2) {
            if w[0].bits >= w[1].bits {
                return Err(Error::InvalidTower("counter widths must strictly increase".into()));
            }
            if w[0].width * w[0].bits as usize != w[1].width * w[1].bits as usize {
                return Err(Error::InvalidTower("every level must use the same number of bits".into()));
            }
        }
        Ok(Self { levels })
    }

    /// 32768 8-bit counters over 16384 16-bit counters.
    pub fn standard(seed: u64) -> Self {
        Self::two_level(32768, seed)
    }

    /// `w` 8-bit counters over `w/2` 16-bit counters.
    pub fn two_level(width_8bit: usize, seed: u64) -> Self {
        Self::new(vec![
            TowerLevel { width: width_8bit, bits: 8, seed: derive_seed(seed, 0) },
            TowerLevel { width: width_8bit / 2, bits: 16, seed: derive_seed(seed, 1) },
        ])
        .expect("two-level layout is valid")
    }

    pub fn levels(&self) -> &[TowerLevel] {
        &self.levels
    }

    /// Index of the level with the most counters.
    pub fn widest_level(&self) -> usize {
        let mut best = 0;
        for (i, l) in self.levels.iter().enumerate() {
            if l.width > self.levels[best].width {
                best = i;
            }
        }
        best
    }

    /// Largest value any level can report before saturating.
    pub fn saturation_floor(&self) -> u64 {
        self.levels.iter().map(|l| l.max_value() as u64).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SizeEstimate {
    Count { value: u64 },
    /// Every mapped counter overflowed; the flow has at least `floor` packets.
    Saturated { floor: u64 },
}

impl SizeEstimate {
    /// Numeric reading, using the floor for saturated flows.
    pub fn value(&self) -> u64 {
        match *self {
            SizeEstimate::Count { value } => value,
            SizeEstimate::Saturated { floor } => floor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TowerSketch {
    config: TowerConfig,
    arrays: Vec<Vec<u32>>,
}

impl TowerSketch {
    pub fn new(config: TowerConfig) -> Self {
        let arrays = config.levels.iter().map(|l| vec![0u32; l.width]).collect();
        Self { config, arrays }
    }

    pub fn config(&self) -> &TowerConfig {
        &self.config
    }

    pub fn level(&self, i: usize) -> &[u32] {
        &self.arrays[i]
    }

    pub fn clear(&mut self) {
        for a in &mut self.arrays {
            a.iter_mut().for_each(|c| *c = 0);
        }
    }

    #[inline]
    fn slot(level: &TowerLevel, flow: u64) -> usize {
        (keyed_hash(flow, level.seed) % level.width as u64) as usize
    }

    /// Counts one packet of `flow`.
    pub fn update(&mut self, flow: u64) {
        for (level, arr) in self.config.levels.iter().zip(&mut self.arrays) {
            let c = &mut arr[Self::slot(level, flow)];
            if *c < level.max_value() {
                *c += 1;
            }
        }
    }

    /// Counts one packet and returns the post-insertion estimate.
    pub fn update_and_query(&mut self, flow: u64) -> SizeEstimate {
        let mut best: Option<u32> = None;
        for (level, arr) in self.config.levels.iter().zip(&mut self.arrays) {
            let max = level.max_value();
            let c = &mut arr[Self::slot(level, flow)];
            if *c < max {
                *c += 1;
            }
            if *c < max {
                best = Some(best.map_or(*c, |b| b.min(*c)));
            }
        }
        self.finish(best)
    }

    pub fn query(&self, flow: u64) -> SizeEstimate {
        let mut best: Option<u32> = None;
        for (level, arr) in self.config.levels.iter().zip(&self.arrays) {
            let c = arr[Self::slot(level, flow)];
            if c < level.max_value() {
                best = Some(best.map_or(c, |b| b.min(c)));
            }
        }
        self.finish(best)
    }

    fn finish(&self, best: Option<u32>) -> SizeEstimate {
        match best {
            Some(v) => SizeEstimate::Count { value: v as u64 },
            None => SizeEstimate::Saturated { floor: self.config.saturation_floor() },
        }
    }

    /// Distinct-flow estimate from the level with the most counters.
    pub fn cardinality(&self) -> LinearCount {
        let i = self.config.widest_level();
        let zeros = self.arrays[i].iter().filter(|&&c| c == 0).count();
        linear_count(zeros, self.arrays[i].len())
    }

    pub fn dump(&self) -> TowerDump {
        TowerDump { version: TOWER_DUMP_VERSION, config: self.config.clone(), arrays: self.arrays.clone() }
    }
}

/// Versioned serialized form: configuration plus per-level counter arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TowerDump {
    pub version: u16,
    pub config: TowerConfig,
    pub arrays: Vec<Vec<u32>>,
}

impl TowerDump {
    pub fn into_sketch(self) -> Result<TowerSketch> {
        if self.version != TOWER_DUMP_VERSION {
            return Err(Error::Codec(format!("unsupported tower dump version {}", self.version)));
        }
        let config = TowerConfig::new(self.config.levels)?;
        if self.arrays.len() != config.levels.len() {
            return Err(Error::Codec("level count mismatch".into()));
        }
        for (l, a) in config.levels.iter().zip(&self.arrays) {
            if a.len() != l.width || a.iter().any(|&c| c > l.max_value()) {
                return Err(Error::Codec("counter array does not fit its level".into()));
            }
        }
        Ok(TowerSketch { config, arrays: self.arrays })
    }
}

impl Serialize for TowerSketch {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.dump().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TowerSketch {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        TowerDump::deserialize(deserializer)?.into_sketch().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hierarchy {
    HeavyHitter,
    HeavyLoss,
    SampledLight,
    UnsampledLight,
}

impl Hierarchy {
    /// Two-bit header encoding.
    pub fn tag(self) -> u8 {
        match self {
            Hierarchy::HeavyHitter => 0b00,
            Hierarchy::HeavyLoss => 0b01,
            Hierarchy::SampledLight => 0b10,
            Hierarchy::UnsampledLight => 0b11,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0b00 => Hierarchy::HeavyHitter,
            0b01 => Hierarchy::HeavyLoss,
            0b10 => Hierarchy::SampledLight,
            0b11 => Hierarchy::UnsampledLight,
            _ => return None,
        })
    }
}

/// `T_h`, `T_l` and the light-flow sample rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierThresholds {
    pub heavy: u64,
    pub light: u64,
    pub sample_rate: f64,
}

impl ClassifierThresholds {
    pub fn new(heavy: u64, light: u64, sample_rate: f64) -> Result<Self> {
        let t = Self { heavy, light, sample_rate };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.light < 1 || self.light > self.heavy {
            return Err(Error::InvalidTower(format!(
                "thresholds need 1 <= T_l <= T_h, got T_l={} T_h={}",
                self.light, self.heavy
            )));
        }
        if !(0.0..=1.0).contains(&self.sample_rate) {
            return Err(Error::InvalidTower(format!("sample rate {} outside [0, 1]", self.sample_rate)));
        }
        Ok(())
    }

    /// Number of the 65536 hash values that count as sampled.
    pub fn sample_cutoff(&self) -> u32 {
        ((SAMPLE_RANGE as f64 * self.sample_rate).ceil() as u32).min(SAMPLE_RANGE)
    }
}

impl Default for ClassifierThresholds {
    fn default() -> Self {
        Self { heavy: 1, light: 1, sample_rate: 1.0 }
    }
}

/// Flow-consistent light-flow sampling shared by every switch with the same seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sampler {
    pub seed: u64,
}

impl Sampler {
    #[inline]
    pub fn hash16(&self, flow: u64) -> u32 {
        (keyed_hash(flow, self.seed) & 0xFFFF) as u32
    }

    #[inline]
    pub fn is_sampled(&self, flow: u64, cutoff: u32) -> bool {
        self.hash16(flow) < cutoff
    }
}

/// Hierarchy of a packet given its flow's post-insertion size estimate.
pub fn classify(size: SizeEstimate, flow: u64, th: &ClassifierThresholds, sampler: &Sampler) -> Hierarchy {
    let size = match size {
        SizeEstimate::Count { value } => value,
        SizeEstimate::Saturated { .. } => u64::MAX,
    };
    if size >= th.heavy {
        Hierarchy::HeavyHitter
    } else if size < th.light {
        if sampler.is_sampled(flow, th.sample_cutoff()) {
            Hierarchy::SampledLight
        } else {
            Hierarchy::UnsampledLight
        }
    } else {
        Hierarchy::HeavyLoss
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_tower() -> TowerSketch {
        TowerSketch::new(TowerConfig::two_level(1024, 3))
    }

    #[test]
    fn config_validation() {
        let lv = |width, bits| TowerLevel { width, bits, seed: bits as u64 };
        assert!(TowerConfig::new(vec![]).is_err());
        assert!(TowerConfig::new(vec![lv(16, 8), lv(8, 8)]).is_err());
        assert!(TowerConfig::new(vec![lv(16, 8), lv(16, 16)]).is_err());
        assert!(TowerConfig::new(vec![lv(16, 8), lv(8, 16), lv(4, 32)]).is_ok());
        let std = TowerConfig::standard(1);
        assert_eq!(std.levels()[0].width, 32768);
        assert_eq!(std.levels()[0].bits, 8);
        assert_eq!(std.levels()[1].width, 16384);
        assert_eq!(std.levels()[1].bits, 16);
    }

    #[test]
    fn first_update_sets_counters_to_one() {
        let mut t = small_tower();
        assert_eq!(t.query(42), SizeEstimate::Count { value: 0 });
        t.update(42);
        for (i, l) in t.config().levels().iter().enumerate() {
            assert_eq!(t.level(i)[TowerSketch::slot(l, 42)], 1);
        }
    }

    #[test]
    fn eight_bit_level_pins_at_255() {
        let mut t = small_tower();
        for _ in 0..300 {
            t.update(7);
        }
        let l0 = t.config().levels()[0];
        let l1 = t.config().levels()[1];
        assert_eq!(t.level(0)[TowerSketch::slot(&l0, 7)], 255);
        assert_eq!(t.level(1)[TowerSketch::slot(&l1, 7)], 300);
        assert_eq!(t.query(7), SizeEstimate::Count { value: 300 });
    }

    #[test]
    fn all_levels_saturated() {
        let cfg = TowerConfig::new(vec![
            TowerLevel { width: 8, bits: 2, seed: 1 },
            TowerLevel { width: 4, bits: 4, seed: 2 },
        ])
        .unwrap();
        let mut t = TowerSketch::new(cfg);
        for _ in 0..20 {
            t.update(1);
        }
        assert_eq!(t.query(1), SizeEstimate::Saturated { floor: 15 });
    }

    #[test]
    fn update_and_query_agrees_with_query() {
        let mut t = small_tower();
        for k in 0..5000u64 {
            let f = k % 300;
            let a = t.update_and_query(f);
            assert_eq!(a, t.query(f));
        }
    }

    #[test]
    fn thresholds_validation_and_cutoff() {
        assert!(ClassifierThresholds::new(5, 0, 1.0).is_err());
        assert!(ClassifierThresholds::new(5, 6, 1.0).is_err());
        assert!(ClassifierThresholds::new(5, 5, 1.1).is_err());
        assert_eq!(ClassifierThresholds::new(5, 2, 1.0).unwrap().sample_cutoff(), 65536);
        assert_eq!(ClassifierThresholds::new(5, 2, 0.5).unwrap().sample_cutoff(), 32768);
        assert_eq!(ClassifierThresholds::new(5, 2, 0.1).unwrap().sample_cutoff(), 6554);
        assert_eq!(ClassifierThresholds::new(5, 2, 0.0).unwrap().sample_cutoff(), 0);
    }

    #[test]
    fn classification_bands() {
        let s = Sampler { seed: 9 };
        let th = ClassifierThresholds::new(10, 4, 1.0).unwrap();
        let c = |v| classify(SizeEstimate::Count { value: v }, 1, &th, &s);
        assert_eq!(c(10), Hierarchy::HeavyHitter);
        assert_eq!(c(9), Hierarchy::HeavyLoss);
        assert_eq!(c(4), Hierarchy::HeavyLoss);
        assert_eq!(c(3), Hierarchy::SampledLight);
        assert_eq!(classify(SizeEstimate::Saturated { floor: 3 }, 1, &th, &s), Hierarchy::HeavyHitter);
        // T_l = 1 never yields a light verdict for a post-insertion size
        let th = ClassifierThresholds::new(10, 1, 0.0).unwrap();
        assert_eq!(classify(SizeEstimate::Count { value: 1 }, 1, &th, &s), Hierarchy::HeavyLoss);
        let none = ClassifierThresholds::new(10, 4, 0.0).unwrap();
        assert_eq!(classify(SizeEstimate::Count { value: 1 }, 1, &none, &s), Hierarchy::UnsampledLight);
    }

    #[test]
    fn sample_rate_is_honoured() {
        let s = Sampler { seed: 77 };
        let th = ClassifierThresholds::new(10, 10, 0.25).unwrap();
        let hits = (0..40_000u64).filter(|&f| s.is_sampled(f, th.sample_cutoff())).count();
        assert!((hits as f64 / 40_000.0 - 0.25).abs() < 0.01, "{hits}");
    }

    #[test]
    fn tags_roundtrip() {
        for h in [Hierarchy::HeavyHitter, Hierarchy::HeavyLoss, Hierarchy::SampledLight, Hierarchy::UnsampledLight] {
            assert_eq!(Hierarchy::from_tag(h.tag()), Some(h));
        }
        assert_eq!(Hierarchy::from_tag(4), None);
    }

    #[test]
    fn dump_roundtrip() {
        let mut t = small_tower();
        for f in 0..500 {
            t.update(f % 37);
        }
        let json = serde_json::to_string(&t).unwrap();
        assert!(json.contains("\"version\":1"));
        let back: TowerSketch = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
        let mut bad = t.dump();
        bad.arrays[0][0] = 1000;
        assert!(bad.into_sketch().is_err());
    }
}
