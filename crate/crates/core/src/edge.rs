//! Per-switch data plane: classifier, divided upstream/downstream encoders,
//! and two sketch groups rotated by a one-bit epoch timestamp.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fermat::{FermatParams, FermatSketch, DEFAULT_ARRAYS};
use crate::hash::{derive_seed, derive_seeds};
use crate::modular::MERSENNE_61;
use crate::tower::{classify, ClassifierThresholds, Hierarchy, Sampler, TowerConfig, TowerSketch};

pub const GROUP_DUMP_VERSION: u16 = 1;

/// Settings every edge switch of one deployment shares. Encoders built from
/// the same deployment can be added and subtracted part by part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deployment {
    pub arrays: usize,
    pub prime: u64,
    pub seeds: Vec<u64>,
    pub upstream_buckets: usize,
    pub downstream_buckets: usize,
    pub tower: TowerConfig,
    pub sampler: Sampler,
}

impl Deployment {
    /// Three arrays, 4096 upstream and 3072 downstream buckets per array, and
    /// the standard two-level classifier.
    pub fn from_seed(seed: u64) -> Self {
        Self {
            arrays: DEFAULT_ARRAYS,
            prime: MERSENNE_61,
            seeds: derive_seeds(derive_seed(seed, 1), DEFAULT_ARRAYS),
            upstream_buckets: 4096,
            downstream_buckets: 3072,
            tower: TowerConfig::standard(derive_seed(seed, 2)),
            sampler: Sampler { seed: derive_seed(seed, 3) },
        }
    }

    /// Encoder parameters for the epoch numbered `generation`. Every switch
    /// derives the same hash seeds for the same epoch, so sketches of one
    /// epoch combine network-wide, while a pair of flows that collides in
    /// every array in one epoch is unlikely to collide again in the next.
    pub fn part_params(&self, buckets: usize, generation: u64) -> Result<FermatParams> {
        let seeds = self.seeds.iter().map(|&s| derive_seed(s, generation)).collect();
        FermatParams::new(self.arrays, buckets, self.prime, seeds)
    }

    fn part(&self, buckets: usize, generation: u64) -> Result<Option<FermatSketch>> {
        if buckets == 0 {
            return Ok(None);
        }
        Ok(Some(FermatSketch::new(self.part_params(buckets, generation)?)))
    }

    /// Healthy-state starting layout: the reserved minimum for loss
    /// detection and everything else for heavy hitters.
    pub fn healthy_layout(&self, reserve_hl: usize) -> EncoderLayout {
        EncoderLayout {
            heavy_hitter: self.upstream_buckets - reserve_hl,
            heavy_loss: reserve_hl,
            light_loss: 0,
        }
    }
}

/// Buckets per array of the three upstream parts. The downstream encoder
/// mirrors the heavy-loss and light-loss parts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EncoderLayout {
    pub heavy_hitter: usize,
    pub heavy_loss: usize,
    pub light_loss: usize,
}

impl EncoderLayout {
    pub fn validate(&self, deployment: &Deployment) -> Result<()> {
        let total = self.heavy_hitter + self.heavy_loss + self.light_loss;
        if total != deployment.upstream_buckets {
            return Err(Error::InvalidLayout(format!(
                "parts sum to {total}, upstream encoder has {}",
                deployment.upstream_buckets
            )));
        }
        if self.heavy_loss == 0 {
            return Err(Error::InvalidLayout("heavy-loss part needs at least one bucket".into()));
        }
        if self.heavy_loss + self.light_loss > deployment.downstream_buckets {
            return Err(Error::InvalidLayout(format!(
                "loss parts need {} buckets, downstream encoder has {}",
                self.heavy_loss + self.light_loss,
                deployment.downstream_buckets
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchConfig {
    pub layout: EncoderLayout,
    pub thresholds: ClassifierThresholds,
}

impl SwitchConfig {
    pub fn validate(&self, deployment: &Deployment) -> Result<()> {
        self.layout.validate(deployment)?;
        self.thresholds.validate()
    }
}

/// One epoch's worth of sketches on one switch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SketchGroup {
    pub version: u16,
    pub switch: usize,
    pub epoch_bit: u8,
    /// Epoch counter that selects the encoder hash seeds.
    pub generation: u64,
    pub config: SwitchConfig,
    pub classifier: TowerSketch,
    pub upstream_hh: Option<FermatSketch>,
    pub upstream_hl: Option<FermatSketch>,
    pub upstream_ll: Option<FermatSketch>,
    pub downstream_hl: Option<FermatSketch>,
    pub downstream_ll: Option<FermatSketch>,
    /// Packets written into this group since it was built.
    pub packets: u64,
}

impl SketchGroup {
    pub fn new(deployment: &Deployment, switch: usize, epoch_bit: u8, generation: u64, config: SwitchConfig) -> Result<Self> {
        config.validate(deployment)?;
        let l = config.layout;
        let g = generation;
        Ok(Self {
            version: GROUP_DUMP_VERSION,
            switch,
            epoch_bit,
            generation,
            config,
            classifier: TowerSketch::new(deployment.tower.clone()),
            upstream_hh: deployment.part(l.heavy_hitter, g)?,
            upstream_hl: deployment.part(l.heavy_loss, g)?,
            upstream_ll: deployment.part(l.light_loss, g)?,
            downstream_hl: deployment.part(l.heavy_loss, g)?,
            downstream_ll: deployment.part(l.light_loss, g)?,
            packets: 0,
        })
    }

    pub fn is_pristine(&self) -> bool {
        self.packets == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedPacket {
    pub flow: u64,
    pub ingress: usize,
    pub egress: usize,
    pub hierarchy: Hierarchy,
    pub epoch_bit: u8,
}

#[derive(Debug, Clone)]
pub struct EdgeSwitch {
    id: usize,
    deployment: Deployment,
    groups: [SketchGroup; 2],
    current_bit: u8,
    active: SwitchConfig,
    staged: Option<SwitchConfig>,
}

impl EdgeSwitch {
    pub fn new(id: usize, deployment: Deployment, config: SwitchConfig) -> Result<Self> {
        let groups = [
            SketchGroup::new(&deployment, id, 0, 0, config)?,
            SketchGroup::new(&deployment, id, 1, 1, config)?,
        ];
        Ok(Self { id, deployment, groups, current_bit: 0, active: config, staged: None })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn current_bit(&self) -> u8 {
        self.current_bit
    }

    pub fn active_config(&self) -> &SwitchConfig {
        &self.active
    }

    pub fn staged_config(&self) -> Option<&SwitchConfig> {
        self.staged.as_ref()
    }

    pub fn group(&self, bit: u8) -> &SketchGroup {
        &self.groups[bit as usize & 1]
    }

    /// Ingress pipeline: stamp the epoch bit, count the packet in the
    /// classifier, and encode it upstream according to its hierarchy.
    pub fn process_ingress(&mut self, flow: u64, egress: usize) -> Result<TaggedPacket> {
        let bit = self.current_bit;
        let sampler = self.deployment.sampler;
        let g = &mut self.groups[bit as usize];
        let size = g.classifier.update_and_query(flow);
        let hierarchy = classify(size, flow, &g.config.thresholds, &sampler);
        let part = match hierarchy {
            Hierarchy::HeavyHitter => g.upstream_hh.as_mut(),
            Hierarchy::HeavyLoss => g.upstream_hl.as_mut(),
            Hierarchy::SampledLight => g.upstream_ll.as_mut(),
            Hierarchy::UnsampledLight => None,
        };
        if let Some(sketch) = part {
            sketch.update(flow, 1)?;
        }
        g.packets += 1;
        Ok(TaggedPacket { flow, ingress: self.id, egress, hierarchy, epoch_bit: bit })
    }

    /// Egress pipeline: encode into the downstream group named by the
    /// packet's epoch bit, using only the carried hierarchy tag.
    pub fn process_egress(&mut self, pkt: &TaggedPacket) -> Result<()> {
        let g = &mut self.groups[pkt.epoch_bit as usize & 1];
        let part = match pkt.hierarchy {
            Hierarchy::HeavyHitter | Hierarchy::HeavyLoss => g.downstream_hl.as_mut(),
            Hierarchy::SampledLight => g.downstream_ll.as_mut(),
            Hierarchy::UnsampledLight => None,
        };
        if let Some(sketch) = part {
            sketch.update(pkt.flow, 1)?;
        } else if pkt.hierarchy == Hierarchy::SampledLight {
            return Err(Error::InvalidLayout("sampled light packet reached a switch without a light-loss part".into()));
        }
        g.packets += 1;
        Ok(())
    }

    /// Flips the epoch bit and returns the bit of the epoch that just ended.
    ///
    /// A staged configuration is installed into the group that becomes
    /// active. That group must have been collected since it was last used.
    pub fn rotate_epoch(&mut self) -> Result<u8> {
        let ended = self.current_bit;
        self.current_bit ^= 1;
        if let Some(cfg) = self.staged.take() {
            let idx = self.current_bit as usize;
            if !self.groups[idx].is_pristine() {
                return Err(Error::InvalidLayout("cannot reconfigure a group that was never collected".into()));
            }
            self.groups[idx] = SketchGroup::new(&self.deployment, self.id, self.current_bit, self.groups[idx].generation, cfg)?;
            self.active = cfg;
        }
        Ok(ended)
    }

    /// Hands over the frozen group of a finished epoch and leaves a fresh
    /// one in its slot.
    pub fn collect(&mut self, bit: u8) -> Result<SketchGroup> {
        let bit = bit & 1;
        if bit == self.current_bit {
            return Err(Error::EpochMismatch);
        }
        let cfg = self.staged.unwrap_or(self.active);
        let next = self.groups[bit as usize].generation + 2;
        let fresh = SketchGroup::new(&self.deployment, self.id, bit, next, cfg)?;
        Ok(std::mem::replace(&mut self.groups[bit as usize], fresh))
    }

    /// Records a configuration for the next epoch that has not seen traffic.
    ///
    /// If the active group is still untouched the change applies to it
    /// directly; otherwise it waits for the next rotation. A group that has
    /// seen packets is never modified.
    pub fn stage_reconfig(&mut self, config: SwitchConfig) -> Result<()> {
        config.validate(&self.deployment)?;
        if config == self.active && self.staged.is_none() {
            return Ok(());
        }
        let idx = self.current_bit as usize;
        if self.groups[idx].is_pristine() {
            let g = self.groups[idx].generation;
            self.groups[idx] = SketchGroup::new(&self.deployment, self.id, self.current_bit, g, config)?;
            self.active = config;
            self.staged = None;
            let other = idx ^ 1;
            if self.groups[other].is_pristine() {
                let g = self.groups[other].generation;
                self.groups[other] = SketchGroup::new(&self.deployment, self.id, other as u8, g, config)?;
            }
        } else {
            self.staged = Some(config);
        }
        Ok(())
    }
}
