//! Central controller: collects frozen sketch groups, decodes them, runs the
//! measurement tasks, and decides the next data-plane configuration.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cardinality::LinearCount;
use crate::edge::{Deployment, EncoderLayout, SketchGroup, SwitchConfig};
use crate::error::{Error, Result};
use crate::fermat::{DecodeStatus, FermatSketch, Sign};
use crate::flowset::Flowset;
use crate::fsd::{choose_threshold, tower_fsd, EmConfig, SizeDistribution};
use crate::tower::{ClassifierThresholds, Sampler};

/// Lowest sample rate the controller will install.
pub const MIN_SAMPLE_RATE: f64 = 1.0 / 65536.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerParams {
    pub target_load: f64,
    pub low_load: f64,
    pub max_load: f64,
    pub reserve_hl: usize,
    pub ill_layout: EncoderLayout,
    pub heavy_hitter: u64,
    pub heavy_change: u64,
    pub initial_heavy: u64,
    pub em: EmConfig,
}

impl Default for ControllerParams {
    fn default() -> Self {
        Self {
            target_load: 0.70,
            low_load: 0.60,
            max_load: 1.0 / 1.23,
            reserve_hl: 512,
            ill_layout: EncoderLayout { heavy_hitter: 1024, heavy_loss: 2560, light_loss: 512 },
            heavy_hitter: 500,
            heavy_change: 250,
            initial_heavy: 1,
            em: EmConfig::default(),
        }
    }
}

impl ControllerParams {
    pub fn validate(&self, deployment: &Deployment) -> Result<()> {
        if !(0.0 < self.low_load && self.low_load < self.target_load && self.target_load < self.max_load) {
            return Err(Error::InvalidParams("need 0 < low_load < target_load < max_load".into()));
        }
        if self.reserve_hl == 0 || self.reserve_hl > deployment.downstream_buckets {
            return Err(Error::InvalidParams("reserve_hl must fit the downstream encoder".into()));
        }
        if self.ill_layout.light_loss == 0 {
            return Err(Error::InvalidParams("ill layout needs a light-loss part".into()));
        }
        self.ill_layout.validate(deployment)?;
        deployment.healthy_layout(self.reserve_hl).validate(deployment)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Healthy,
    Ill,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub mode: Mode,
    pub configs: Vec<SwitchConfig>,
    /// Network-wide light threshold before per-switch clamping to `T_h`.
    pub light_threshold: u64,
    pub sample_rate: f64,
}

impl ControllerState {
    pub fn initial(deployment: &Deployment, switches: usize, params: &ControllerParams) -> Result<Self> {
        let config = SwitchConfig {
            layout: deployment.healthy_layout(params.reserve_hl),
            thresholds: ClassifierThresholds::new(params.initial_heavy.max(1), 1, 1.0)?,
        };
        config.validate(deployment)?;
        Ok(Self { mode: Mode::Healthy, configs: vec![config; switches], light_threshold: 1, sample_rate: 1.0 })
    }
}

/// Where a count came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Decoded,
    Estimated,
    /// The estimator itself saturated; the value is a lower bound.
    Overloaded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountEstimate {
    pub value: f64,
    pub provenance: Provenance,
}

impl CountEstimate {
    pub fn decoded(n: usize) -> Self {
        Self { value: n as f64, provenance: Provenance::Decoded }
    }

    fn scaled(self, factor: f64) -> Self {
        let provenance = if self.provenance == Provenance::Decoded { Provenance::Estimated } else { self.provenance };
        Self { value: self.value * factor, provenance }
    }
}

/// Mean linear-count estimate over all arrays of a sketch.
pub fn estimate_flows(sketch: &FermatSketch) -> CountEstimate {
    let mut sum = 0.0;
    let mut saturated = false;
    for i in 0..sketch.arrays() {
        let lc = sketch.linear_count(i);
        saturated |= lc.is_saturated();
        sum += lc.value() as f64;
    }
    CountEstimate {
        value: sum / sketch.arrays() as f64,
        provenance: if saturated { Provenance::Overloaded } else { Provenance::Estimated },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum DeltaDecode {
    Absent,
    Decoded { flows: Flowset },
    Failed { estimate: CountEstimate },
}

impl DeltaDecode {
    pub fn flows(&self) -> Option<&Flowset> {
        match self {
            DeltaDecode::Decoded { flows } => Some(flows),
            _ => None,
        }
    }

    pub fn is_failed(&self) -> bool {
        matches!(self, DeltaDecode::Failed { .. })
    }

    pub fn count(&self) -> Option<CountEstimate> {
        match self {
            DeltaDecode::Absent => None,
            DeltaDecode::Decoded { flows } => Some(CountEstimate::decoded(flows.len())),
            DeltaDecode::Failed { estimate } => Some(*estimate),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub heavy_loss: DeltaDecode,
    pub light_loss: DeltaDecode,
    /// Lost packets per flow, summed over both deltas. Only meaningful when
    /// neither delta failed.
    pub losses: Flowset,
    /// Flows reported only by the light-loss delta.
    pub light_only: BTreeSet<u64>,
}

impl LossReport {
    pub fn is_complete(&self) -> bool {
        !self.heavy_loss.is_failed() && !self.light_loss.is_failed()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossDetection {
    /// Decoded heavy-hitter encoder per switch, `None` on failure.
    pub heavy: Vec<Option<Flowset>>,
    /// Absent when any heavy-hitter decode failed.
    pub report: Option<LossReport>,
}

fn delta(parts: &[(&Option<FermatSketch>, Sign)]) -> Result<Option<FermatSketch>> {
    let mut acc: Option<FermatSketch> = None;
    for (part, sign) in parts {
        let Some(s) = part else { continue };
        match acc.as_mut() {
            None => {
                let mut first = FermatSketch::new(s.params().clone());
                first.merge(s, *sign)?;
                acc = Some(first);
            }
            Some(a) => a.merge(s, *sign)?,
        }
    }
    Ok(acc)
}

fn decode_delta(sketch: Option<FermatSketch>) -> DeltaDecode {
    match sketch {
        None => DeltaDecode::Absent,
        Some(s) => {
            let out = s.decode();
            if out.is_success() {
                DeltaDecode::Decoded { flows: out.flowset }
            } else {
                DeltaDecode::Failed { estimate: estimate_flows(&s) }
            }
        }
    }
}

/// Network-wide packet-loss detection over one epoch's groups.
pub fn detect_losses(groups: &[SketchGroup]) -> Result<LossDetection> {
    let Some(first) = groups.first() else {
        return Ok(LossDetection { heavy: Vec::new(), report: None });
    };
    if groups.iter().any(|g| g.epoch_bit != first.epoch_bit) {
        return Err(Error::EpochMismatch);
    }
    let heavy: Vec<Option<Flowset>> = groups
        .par_iter()
        .map(|g| match &g.upstream_hh {
            None => Some(Flowset::new()),
            Some(s) => {
                let out = s.decode();
                out.is_success().then_some(out.flowset)
            }
        })
        .collect();
    if heavy.iter().any(Option::is_none) {
        return Ok(LossDetection { heavy, report: None });
    }

    let mut upstream_hl = Vec::with_capacity(groups.len());
    for (g, hh) in groups.iter().zip(&heavy) {
        let mut copy = g.upstream_hl.clone();
        let hh = hh.as_ref().expect("checked above");
        if !hh.is_empty() {
            let s = copy.as_mut().ok_or(Error::IncompatibleSketches)?;
            for (f, q) in hh {
                s.update(f, q)?;
            }
        }
        upstream_hl.push(copy);
    }
    let mut hl_parts: Vec<(&Option<FermatSketch>, Sign)> = upstream_hl.iter().map(|s| (s, Sign::Plus)).collect();
    hl_parts.extend(groups.iter().map(|g| (&g.downstream_hl, Sign::Minus)));
    let mut ll_parts: Vec<(&Option<FermatSketch>, Sign)> = groups.iter().map(|g| (&g.upstream_ll, Sign::Plus)).collect();
    ll_parts.extend(groups.iter().map(|g| (&g.downstream_ll, Sign::Minus)));

    let (hl, ll) = rayon::join(|| delta(&hl_parts).map(decode_delta), || delta(&ll_parts).map(decode_delta));
    let (heavy_loss, light_loss) = (hl?, ll?);

    let mut losses = Flowset::new();
    let mut light_only = BTreeSet::new();
    if let Some(h) = heavy_loss.flows() {
        losses.absorb(h);
    }
    if let Some(l) = light_loss.flows() {
        for (f, n) in l {
            if !losses.contains(f) {
                light_only.insert(f);
            }
            losses.add(f, n);
        }
    }
    Ok(LossDetection { heavy, report: Some(LossReport { heavy_loss, light_loss, losses, light_only }) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchAnalysis {
    pub switch: usize,
    pub config: SwitchConfig,
    pub flows: LinearCount,
    /// Decoded heavy-hitter candidates with their estimated sizes.
    pub heavy: Option<BTreeMap<u64, u64>>,
    /// Candidate count: exact when decoded, linear counting otherwise.
    pub candidates: CountEstimate,
    pub fsd: SizeDistribution,
}

impl SwitchAnalysis {
    pub fn heavy_load(&self, arrays: usize) -> Option<f64> {
        let h = self.heavy.as_ref()?;
        Some(h.len() as f64 / (self.config.layout.heavy_hitter.max(1) * arrays) as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VictimEstimate {
    pub count: CountEstimate,
    pub fsd: SizeDistribution,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochAnalysis {
    pub epoch_bit: u8,
    pub switches: Vec<SwitchAnalysis>,
    pub loss: Option<LossReport>,
    pub victims: Option<VictimEstimate>,
    #[serde(skip)]
    groups: Vec<SketchGroup>,
}

impl EpochAnalysis {
    pub fn analyze(groups: Vec<SketchGroup>, sampler: &Sampler, em: &EmConfig) -> Result<Self> {
        let detection = detect_losses(&groups)?;
        let switches: Vec<SwitchAnalysis> = groups
            .par_iter()
            .zip(&detection.heavy)
            .map(|(g, hh)| {
                let th = g.config.thresholds.heavy;
                let heavy: Option<BTreeMap<u64, u64>> =
                    hh.as_ref().map(|fs| fs.iter().map(|(f, q)| (f, th - 1 + q.max(0) as u64)).collect());
                let tail: Vec<u64> = heavy.iter().flat_map(|h| h.values().copied()).collect();
                let candidates = match &heavy {
                    Some(h) => CountEstimate::decoded(h.len()),
                    None => g.upstream_hh.as_ref().map_or(CountEstimate::decoded(0), estimate_flows),
                };
                SwitchAnalysis {
                    candidates,
                    switch: g.switch,
                    config: g.config,
                    flows: g.classifier.cardinality(),
                    fsd: tower_fsd(&g.classifier, &tail, em),
                    heavy,
                }
            })
            .collect();
        let mut analysis = Self { epoch_bit: groups.first().map_or(0, |g| g.epoch_bit), switches, loss: detection.report, victims: None, groups };
        analysis.victims = analysis.estimate_victims(sampler);
        Ok(analysis)
    }

    pub fn groups(&self) -> &[SketchGroup] {
        &self.groups
    }

    /// Heavy-hitter size if the flow is a decoded candidate anywhere,
    /// otherwise the largest classifier reading across switches.
    pub fn flow_size(&self, flow: u64) -> u64 {
        for s in &self.switches {
            if let Some(&v) = s.heavy.as_ref().and_then(|h| h.get(&flow)) {
                return v;
            }
        }
        self.groups.iter().map(|g| g.classifier.query(flow).value()).max().unwrap_or(0)
    }

    pub fn is_ill(&self) -> bool {
        self.switches.iter().any(|s| s.config.layout.light_loss > 0)
    }

    pub fn sample_rate(&self) -> f64 {
        self.switches.first().map_or(1.0, |s| s.config.thresholds.sample_rate)
    }

    fn sized(&self, flows: impl Iterator<Item = u64>) -> SizeDistribution {
        SizeDistribution::from_sizes(flows.map(|f| self.flow_size(f).max(1)))
    }

    fn estimate_victims(&self, sampler: &Sampler) -> Option<VictimEstimate> {
        let loss = self.loss.as_ref()?;
        if !self.is_ill() {
            return Some(match &loss.heavy_loss {
                DeltaDecode::Decoded { flows } => {
                    VictimEstimate { count: CountEstimate::decoded(flows.len()), fsd: self.sized(flows.flows()) }
                }
                other => VictimEstimate { count: other.count()?, fsd: SizeDistribution::new() },
            });
        }
        let rate = self.sample_rate().max(MIN_SAMPLE_RATE);
        let cutoff = self.switches[0].config.thresholds.sample_cutoff();
        let light = loss.light_loss.flows();
        match (&loss.heavy_loss, light) {
            (DeltaDecode::Decoded { flows: heavy }, Some(light)) => {
                let sampled: BTreeSet<u64> =
                    heavy.flows().filter(|&f| sampler.is_sampled(f, cutoff)).chain(light.flows()).collect();
                Some(VictimEstimate {
                    count: CountEstimate::decoded(sampled.len()).scaled(1.0 / rate),
                    fsd: self.sized(sampled.iter().copied()).scaled(1.0 / rate),
                })
            }
            (_, Some(light)) => Some(VictimEstimate {
                count: CountEstimate::decoded(light.len()).scaled(1.0 / rate),
                fsd: self.sized(light.flows()).scaled(1.0 / rate),
            }),
            (_, None) => {
                let count = loss.light_loss.count()?.scaled(1.0 / rate);
                Some(VictimEstimate { count, fsd: SizeDistribution::new() })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeavyChange {
    pub flow: u64,
    pub before: u64,
    pub after: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResults {
    pub heavy_hitters: BTreeMap<u64, u64>,
    /// Switches whose heavy-hitter encoder failed to decode.
    pub heavy_failed: Vec<usize>,
    pub heavy_changes: Option<Vec<HeavyChange>>,
    pub cardinality: u64,
    pub fsd: SizeDistribution,
    pub entropy: f64,
    pub losses: Option<Flowset>,
}

/// Flows whose size moved by more than `threshold` between two epochs.
/// Candidates are the decoded heavy-hitter flows of either epoch.
pub fn heavy_changes(before: &EpochAnalysis, after: &EpochAnalysis, threshold: u64) -> Vec<HeavyChange> {
    let candidates: BTreeSet<u64> = before
        .switches
        .iter()
        .chain(&after.switches)
        .filter_map(|s| s.heavy.as_ref())
        .flat_map(|h| h.keys().copied())
        .collect();
    candidates
        .into_iter()
        .filter_map(|flow| {
            let (b, a) = (before.flow_size(flow), after.flow_size(flow));
            (b.abs_diff(a) > threshold).then_some(HeavyChange { flow, before: b, after: a })
        })
        .collect()
}

pub fn accumulation_tasks(analysis: &EpochAnalysis, previous: Option<&EpochAnalysis>, params: &ControllerParams) -> TaskResults {
    let mut heavy_hitters = BTreeMap::new();
    let mut heavy_failed = Vec::new();
    let mut cardinality = 0;
    let mut fsd = SizeDistribution::new();
    for s in &analysis.switches {
        match &s.heavy {
            Some(h) => heavy_hitters.extend(h.iter().filter(|(_, &v)| v > params.heavy_hitter).map(|(&f, &v)| (f, v))),
            None => heavy_failed.push(s.switch),
        }
        cardinality += s.flows.value();
        fsd.merge(&s.fsd);
    }
    let heavy_changes = match previous {
        Some(p) if heavy_failed.is_empty() && p.switches.iter().all(|s| s.heavy.is_some()) => {
            Some(heavy_changes(p, analysis, params.heavy_change))
        }
        _ => None,
    };
    let losses = analysis.loss.as_ref().filter(|l| l.is_complete()).map(|l| l.losses.clone());
    let entropy = fsd.entropy();
    TaskResults { heavy_hitters, heavy_failed, heavy_changes, cardinality, fsd, entropy, losses }
}

/// Network-wide sizing shared by every switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimensions {
    pub arrays: usize,
    pub upstream: usize,
    pub downstream: usize,
}

impl From<&Deployment> for Dimensions {
    fn from(d: &Deployment) -> Self {
        Self { arrays: d.arrays, upstream: d.upstream_buckets, downstream: d.downstream_buckets }
    }
}

fn capacity(params: &ControllerParams, buckets: usize, arrays: usize) -> f64 {
    params.target_load * (buckets * arrays) as f64
}

fn buckets_for(params: &ControllerParams, flows: f64, arrays: usize) -> usize {
    (flows / (params.target_load * arrays as f64)).ceil().max(0.0) as usize
}

/// Rescales `fsd` so that its count at or above `at` equals `observed`.
/// Classification errors and size overestimates shift the real count
/// relative to the estimated distribution; anchoring removes that bias
/// near the current threshold.
fn anchored(fsd: &SizeDistribution, at: u64, observed: f64) -> SizeDistribution {
    let c = fsd.ccdf(at);
    if c > 0.0 && observed > 0.0 {
        fsd.scaled(observed / c)
    } else {
        fsd.clone()
    }
}

fn clamp_rate(rate: f64) -> f64 {
    if rate.is_nan() {
        1.0
    } else {
        rate.clamp(MIN_SAMPLE_RATE, 1.0)
    }
}

/// Per-switch heavy threshold after the memory plan is fixed. Triggers only
/// outside the band; the upper edge is the decodable maximum unless the
/// heavy-hitter part is being resized.
fn trim_heavy(sw: &SwitchAnalysis, new_hh: usize, params: &ControllerParams, arrays: usize) -> u64 {
    let current = sw.config.thresholds.heavy;
    let Some(heavy) = sw.heavy.as_ref() else { return current };
    if new_hh == 0 {
        return current;
    }
    let expected = heavy.len() as f64 / (new_hh * arrays) as f64;
    let upper = if new_hh == sw.config.layout.heavy_hitter { params.max_load } else { params.target_load };
    if expected >= params.low_load && expected <= upper {
        return current;
    }
    let mut hybrid = sw.fsd.restrict(1, current);
    hybrid.merge(&SizeDistribution::from_sizes(heavy.values().copied()));
    choose_threshold(&hybrid, capacity(params, new_hh, arrays)).max(1)
}

fn finalize(heavy: &[u64], layout: EncoderLayout, light: u64, rate: f64) -> Vec<SwitchConfig> {
    heavy
        .iter()
        .map(|&th| SwitchConfig {
            layout,
            thresholds: ClassifierThresholds { heavy: th, light: light.clamp(1, th), sample_rate: rate },
        })
        .collect()
}

/// Computes the configuration to stage after `analysis`. Pure: the result
/// depends only on the analysis, the current state, and the parameters.
pub fn shift_attention(
    analysis: &EpochAnalysis,
    state: &ControllerState,
    params: &ControllerParams,
    dims: Dimensions,
) -> ControllerState {
    let d = dims.arrays;
    let Some(first) = analysis.switches.first() else { return state.clone() };
    let layout = first.config.layout;
    let mut heavy: Vec<u64> = analysis.switches.iter().map(|s| s.config.thresholds.heavy).collect();
    let mut next = state.clone();

    let mut hh_failed = false;
    for (i, s) in analysis.switches.iter().enumerate() {
        if s.heavy.is_none() {
            hh_failed = true;
            let th = s.config.thresholds.heavy;
            let fsd = anchored(&s.fsd, th, s.candidates.value);
            heavy[i] = choose_threshold(&fsd, capacity(params, s.config.layout.heavy_hitter, d)).max(th + 1);
        }
    }
    let Some(loss) = analysis.loss.as_ref().filter(|_| !hh_failed) else {
        next.configs = finalize(&heavy, layout, state.light_threshold, state.sample_rate);
        return next;
    };

    let mut layout = layout;
    match state.mode {
        Mode::Healthy => {
            let mut hl = layout.heavy_loss;
            match &loss.heavy_loss {
                DeltaDecode::Failed { estimate } => {
                    let required = buckets_for(params, estimate.value, d);
                    let grown = if required > hl { required } else { hl + hl / 2 };
                    if required > dims.downstream || (required <= hl && hl >= dims.downstream) {
                        next.mode = Mode::Ill;
                        layout = params.ill_layout;
                        next.light_threshold = heavy.iter().copied().max().unwrap_or(1);
                        next.sample_rate = clamp_rate(capacity(params, layout.light_loss, d) / estimate.value);
                    } else {
                        hl = grown.max(params.reserve_hl).min(dims.downstream);
                    }
                }
                DeltaDecode::Decoded { flows } => {
                    let load = flows.len() as f64 / (hl * d) as f64;
                    if load < params.low_load {
                        hl = buckets_for(params, flows.len() as f64, d).max(params.reserve_hl).min(hl);
                    }
                }
                DeltaDecode::Absent => {}
            }
            if next.mode == Mode::Healthy {
                layout = EncoderLayout { heavy_hitter: dims.upstream - hl, heavy_loss: hl, light_loss: 0 };
                next.light_threshold = 1;
                next.sample_rate = 1.0;
            }
        }
        Mode::Ill => {
            let victims = analysis.victims.as_ref();
            if let DeltaDecode::Failed { estimate } = &loss.light_loss {
                let sampled = estimate.value.max(1.0);
                let mut rate = state.sample_rate * capacity(params, layout.light_loss, d) / sampled;
                if rate >= state.sample_rate {
                    rate = state.sample_rate * 0.8;
                }
                next.sample_rate = clamp_rate(rate);
                next.configs = finalize(&heavy, layout, state.light_threshold, next.sample_rate);
                return next;
            }
            if loss.heavy_loss.is_failed() {
                let observed = loss.heavy_loss.count().map_or(0.0, |c| c.value);
                let t = victims.map_or(0, |v| {
                    choose_threshold(&anchored(&v.fsd, state.light_threshold, observed), capacity(params, layout.heavy_loss, d))
                });
                next.light_threshold = t.max(state.light_threshold + 1);
            } else if let (Some(v), Some(hl_flows), Some(ll_flows)) =
                (victims, loss.heavy_loss.flows(), loss.light_loss.flows())
            {
                let required = buckets_for(params, v.count.value, d);
                if required <= dims.downstream {
                    next.mode = Mode::Healthy;
                    let hl = required.max(params.reserve_hl);
                    layout = EncoderLayout { heavy_hitter: dims.upstream - hl, heavy_loss: hl, light_loss: 0 };
                    next.light_threshold = 1;
                    next.sample_rate = 1.0;
                } else {
                    let hl_load = hl_flows.len() as f64 / (layout.heavy_loss * d) as f64;
                    if hl_load < params.low_load {
                        let fsd = anchored(&v.fsd, state.light_threshold, hl_flows.len() as f64);
                        next.light_threshold = choose_threshold(&fsd, capacity(params, layout.heavy_loss, d)).max(2);
                    }
                    let ll_load = ll_flows.len() as f64 / (layout.light_loss * d) as f64;
                    if ll_load < params.low_load {
                        next.sample_rate = if ll_flows.is_empty() {
                            1.0
                        } else {
                            clamp_rate(state.sample_rate * capacity(params, layout.light_loss, d) / ll_flows.len() as f64)
                        };
                    }
                }
            }
        }
    }

    for (i, s) in analysis.switches.iter().enumerate() {
        heavy[i] = trim_heavy(s, layout.heavy_hitter, params, d);
    }
    next.configs = finalize(&heavy, layout, next.light_threshold, next.sample_rate);
    next
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadFactors {
    pub heavy_hitter: Vec<Option<f64>>,
    pub heavy_loss: Option<f64>,
    pub light_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub heavy_hitters: usize,
    pub heavy_changes: Option<usize>,
    pub cardinality: u64,
    pub entropy: f64,
    pub victims_reported: Option<usize>,
    pub lost_packets: Option<i64>,
}

/// One line of the controller's epoch log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub mode: Mode,
    pub configs: Vec<SwitchConfig>,
    pub loads: LoadFactors,
    pub heavy_status: Vec<DecodeStatus>,
    pub heavy_loss_status: Option<String>,
    pub light_loss_status: Option<String>,
    pub decoded_flows: usize,
    pub victim_estimate: Option<CountEstimate>,
    pub next_mode: Mode,
    pub staged: Vec<SwitchConfig>,
    pub changed: bool,
    pub tasks: TaskSummary,
}

fn status_name(d: &DeltaDecode) -> Option<String> {
    match d {
        DeltaDecode::Absent => None,
        DeltaDecode::Decoded { .. } => Some("success".into()),
        DeltaDecode::Failed { .. } => Some("failure".into()),
    }
}

#[derive(Debug, Clone)]
pub struct EpochReport {
    pub record: EpochRecord,
    pub analysis: EpochAnalysis,
    pub tasks: TaskResults,
}

#[derive(Debug, Clone)]
pub struct Controller {
    params: ControllerParams,
    dims: Dimensions,
    sampler: Sampler,
    state: ControllerState,
    previous: Option<EpochAnalysis>,
    epoch: u64,
}

impl Controller {
    pub fn new(deployment: &Deployment, switches: usize, params: ControllerParams) -> Result<Self> {
        params.validate(deployment)?;
        let state = ControllerState::initial(deployment, switches, &params)?;
        Ok(Self { dims: deployment.into(), sampler: deployment.sampler, state, params, previous: None, epoch: 0 })
    }

    pub fn params(&self) -> &ControllerParams {
        &self.params
    }

    pub fn state(&self) -> &ControllerState {
        &self.state
    }

    /// Analyzes one collected epoch, runs the tasks, and updates the state
    /// whose configs should be staged on the switches.
    pub fn process(&mut self, groups: Vec<SketchGroup>) -> Result<EpochReport> {
        let analysis = EpochAnalysis::analyze(groups, &self.sampler, &self.params.em)?;
        let tasks = accumulation_tasks(&analysis, self.previous.as_ref(), &self.params);
        let next = shift_attention(&analysis, &self.state, &self.params, self.dims);
        let d = self.dims.arrays;

        let configs: Vec<SwitchConfig> = analysis.switches.iter().map(|s| s.config).collect();
        let layout = configs.first().map(|c| c.layout);
        let (heavy_loss, light_loss) = match &analysis.loss {
            Some(l) => (
                l.heavy_loss.flows().zip(layout).map(|(f, lay)| f.len() as f64 / (lay.heavy_loss * d) as f64),
                l.light_loss
                    .flows()
                    .zip(layout)
                    .filter(|(_, lay)| lay.light_loss > 0)
                    .map(|(f, lay)| f.len() as f64 / (lay.light_loss * d) as f64),
            ),
            None => (None, None),
        };
        let decoded_flows = analysis.switches.iter().filter_map(|s| s.heavy.as_ref()).map(|h| h.len()).sum::<usize>()
            + analysis.loss.as_ref().map_or(0, |l| {
                l.heavy_loss.flows().map_or(0, |f| f.len()) + l.light_loss.flows().map_or(0, |f| f.len())
            });
        let record = EpochRecord {
            epoch: self.epoch,
            mode: self.state.mode,
            loads: LoadFactors {
                heavy_hitter: analysis.switches.iter().map(|s| s.heavy_load(d)).collect(),
                heavy_loss,
                light_loss,
            },
            heavy_status: analysis
                .switches
                .iter()
                .map(|s| if s.heavy.is_some() { DecodeStatus::Success } else { DecodeStatus::Failure })
                .collect(),
            heavy_loss_status: analysis.loss.as_ref().and_then(|l| status_name(&l.heavy_loss)),
            light_loss_status: analysis.loss.as_ref().and_then(|l| status_name(&l.light_loss)),
            decoded_flows,
            victim_estimate: analysis.victims.as_ref().map(|v| v.count),
            next_mode: next.mode,
            changed: next.configs != configs,
            staged: next.configs.clone(),
            configs,
            tasks: TaskSummary {
                heavy_hitters: tasks.heavy_hitters.len(),
                heavy_changes: tasks.heavy_changes.as_ref().map(Vec::len),
                cardinality: tasks.cardinality,
                entropy: tasks.entropy,
                victims_reported: tasks.losses.as_ref().map(Flowset::len),
                lost_packets: tasks.losses.as_ref().map(Flowset::total),
            },
        };
        self.state = next;
        self.epoch += 1;
        self.previous = Some(analysis.clone());
        Ok(EpochReport { record, analysis, tasks })
    }
}
