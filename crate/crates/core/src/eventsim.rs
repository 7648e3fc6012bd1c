//! Monte Carlo time-tag simulation.
//!
//! Generates per-detector time-tag streams for a planned network: photon
//! pairs are emitted per link as a homogeneous Poisson process (CW pump) or
//! in pulse slots (pulsed pump), thinned by channel transmittance and
//! detector efficiency, smeared by detector jitter, mixed with dark counts
//! and finally passed through a non-paralyzable dead-time stage.
//!
//! All times are 64-bit integer picoseconds. Every link and every detector
//! draws from its own deterministic RNG substream, keyed by channel numbers
//! and user names, so adding a link or user does not perturb the randomness
//! of the rest of the network.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use thiserror::Error;

use crate::netplan::{Edge, MultiplexPlan};
use crate::quantum::{outcome_probs, Basis, TwoQubitState};

/// Picoseconds per second.
pub const PS_PER_S: f64 = 1e12;

#[derive(Debug, Error, PartialEq)]
pub enum EventSimError {
    #[error("no two-qubit state configured for link {0}-{1}")]
    MissingState(String, String),
    #[error("no transmittance configured for channel {0}")]
    MissingTransmittance(i32),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("stream is not sorted at index {0}")]
    UnsortedStream(usize),
    #[error("source mode mismatch: {0}")]
    WrongMode(String),
    #[error("gates overlap for user {0}")]
    GateOverlap(String),
    #[error("mean pairs per pulse {0} exceeds 1; lower the rate or shorten the period")]
    PulseOccupancyTooHigh(f64),
}

/// Pump operation mode of the source.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum SourceMode {
    Cw,
    Pulsed { period_ps: i64, width_ps: i64 },
}

/// Photon-pair source brightness.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceParams {
    /// Generated pair rate per channel pair (per link), in pairs/s.
    pub pair_rate_per_link_hz: f64,
    /// Per-link overrides for sources with an uneven spectrum.
    pub link_rate_overrides: BTreeMap<Edge, f64>,
    pub mode: SourceMode,
}

impl SourceParams {
    pub fn cw(pair_rate_per_link_hz: f64) -> Self {
        Self {
            pair_rate_per_link_hz,
            link_rate_overrides: BTreeMap::new(),
            mode: SourceMode::Cw,
        }
    }

    pub fn pulsed(pair_rate_per_link_hz: f64, period_ps: i64, width_ps: i64) -> Self {
        Self {
            pair_rate_per_link_hz,
            link_rate_overrides: BTreeMap::new(),
            mode: SourceMode::Pulsed {
                period_ps,
                width_ps,
            },
        }
    }

    pub fn rate_for(&self, edge: Edge) -> f64 {
        *self
            .link_rate_overrides
            .get(&edge)
            .unwrap_or(&self.pair_rate_per_link_hz)
    }

    fn validate(&self) -> Result<(), EventSimError> {
        if self.pair_rate_per_link_hz < 0.0 {
            return Err(EventSimError::InvalidParam(format!(
                "pair rate {} < 0",
                self.pair_rate_per_link_hz
            )));
        }
        for (&e, &r) in &self.link_rate_overrides {
            if r < 0.0 {
                return Err(EventSimError::InvalidParam(format!(
                    "pair rate {r} < 0 for link {}-{}",
                    e.a, e.b
                )));
            }
        }
        if let SourceMode::Pulsed {
            period_ps,
            width_ps,
        } = self.mode
        {
            if period_ps <= 0 || width_ps < 0 || width_ps >= period_ps {
                return Err(EventSimError::InvalidParam(format!(
                    "pulse width {width_ps} ps must lie in [0, period {period_ps} ps)"
                )));
            }
        }
        Ok(())
    }
}

/// Free-running single-photon detector model.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DetectorParams {
    pub efficiency: f64,
    pub dark_rate_hz: f64,
    pub dead_time_ps: i64,
    pub jitter_sigma_ps: f64,
}

impl DetectorParams {
    /// A lossless, noiseless, instantaneous detector.
    pub fn ideal() -> Self {
        Self {
            efficiency: 1.0,
            dark_rate_hz: 0.0,
            dead_time_ps: 0,
            jitter_sigma_ps: 0.0,
        }
    }

    fn validate(&self, who: &str) -> Result<(), EventSimError> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(EventSimError::InvalidParam(format!(
                "{who}: efficiency {} outside [0, 1]",
                self.efficiency
            )));
        }
        if self.dark_rate_hz < 0.0 || self.dead_time_ps < 0 || self.jitter_sigma_ps < 0.0 {
            return Err(EventSimError::InvalidParam(format!(
                "{who}: dark rate, dead time and jitter must be non-negative"
            )));
        }
        Ok(())
    }
}

/// Per-channel fiber/filter transmittances and propagation delays.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinkParams {
    pub transmittance: BTreeMap<i32, f64>,
    pub delay_ps: BTreeMap<i32, i64>,
}

impl LinkParams {
    /// Same transmittance on every channel of the plan, zero delays.
    pub fn uniform(plan: &MultiplexPlan, transmittance: f64) -> Self {
        let map = plan
            .channels_in_use()
            .into_iter()
            .map(|c| (c, transmittance))
            .collect();
        Self {
            transmittance: map,
            delay_ps: BTreeMap::new(),
        }
    }

    pub fn delay_for(&self, channel: i32) -> i64 {
        *self.delay_ps.get(&channel).unwrap_or(&0)
    }

    fn transmittance_for(&self, channel: i32) -> Result<f64, EventSimError> {
        let t = *self
            .transmittance
            .get(&channel)
            .ok_or(EventSimError::MissingTransmittance(channel))?;
        if !(0.0..=1.0).contains(&t) {
            return Err(EventSimError::InvalidParam(format!(
                "transmittance {t} outside [0, 1] for channel {channel}"
            )));
        }
        Ok(t)
    }
}

/// Which output port(s) of the analyzer feed the detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PortMode {
    /// Both analyzer outputs are recorded on one stream, tagged with the
    /// outcome bit.
    Dual,
    /// Only the selected output reaches the detector; photons exiting the
    /// other port are lost and dark counts read as the selected outcome.
    Single(u8),
}

/// One user's analyzer configuration for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StationSetting {
    pub basis: Basis,
    pub port: PortMode,
}

impl StationSetting {
    pub fn dual(basis: Basis) -> Self {
        Self {
            basis,
            port: PortMode::Dual,
        }
    }

    pub fn single(basis: Basis, output: u8) -> Self {
        Self {
            basis,
            port: PortMode::Single(output),
        }
    }
}

/// Ground-truth label of a detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Origin {
    /// Photon from pair number `serial` of plan link `link`.
    Pair {
        link: u16,
        serial: u32,
    },
    Dark,
    /// Label stripped or never present (externally recorded tags).
    Unlabeled,
}

/// One detection record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct TimeTag {
    pub time_ps: i64,
    pub detector: u16,
    pub basis: Basis,
    pub outcome: u8,
    pub origin: Origin,
}

/// A time-ordered stream of detections on one detector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TimeTagStream {
    tags: Vec<TimeTag>,
}

impl TimeTagStream {
    /// Wraps a tag vector after checking time order.
    pub fn new(tags: Vec<TimeTag>) -> Result<Self, EventSimError> {
        for (i, pair) in tags.windows(2).enumerate() {
            if pair[1].time_ps < pair[0].time_ps {
                return Err(EventSimError::UnsortedStream(i + 1));
            }
        }
        Ok(Self { tags })
    }

    pub fn tags(&self) -> &[TimeTag] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    /// Mean detection rate over an observation time.
    pub fn rate_hz(&self, duration_s: f64) -> f64 {
        if duration_s <= 0.0 {
            return 0.0;
        }
        self.tags.len() as f64 / duration_s
    }

    /// Stream with every tag failing the predicate removed.
    pub fn filtered(&self, keep: impl Fn(&TimeTag) -> bool) -> Self {
        Self {
            tags: self.tags.iter().copied().filter(|t| keep(t)).collect(),
        }
    }
}

/// Detector gating for the pulsed scheme: each user's detector opens one
/// gate per incident link per pulse, at the link's arrival offset.
#[derive(Debug, Clone, PartialEq)]
pub struct GateConfig {
    pub gate_width_ps: i64,
    /// Gate offset within the pulse period, per link.
    pub offsets_ps: BTreeMap<Edge, i64>,
}

impl GateConfig {
    /// Sorted gate offsets of one user (one per incident link).
    pub fn user_offsets(&self, plan: &MultiplexPlan, user: usize) -> Vec<i64> {
        let mut offsets: Vec<i64> = plan
            .links()
            .iter()
            .filter(|l| l.edge.touches(user))
            .map(|l| *self.offsets_ps.get(&l.edge).unwrap_or(&0))
            .collect();
        offsets.sort_unstable();
        offsets
    }

    /// Fraction of the period during which a user's detector is open.
    pub fn duty_cycle(&self, plan: &MultiplexPlan, user: usize, period_ps: i64) -> f64 {
        let n = self.user_offsets(plan, user).len() as f64;
        n * self.gate_width_ps as f64 / period_ps as f64
    }

    fn validate(&self, plan: &MultiplexPlan, period_ps: i64) -> Result<(), EventSimError> {
        if self.gate_width_ps <= 0 {
            return Err(EventSimError::InvalidParam(format!(
                "gate width {} ps must be positive",
                self.gate_width_ps
            )));
        }
        for user in 0..plan.n_users() {
            let offsets = self.user_offsets(plan, user);
            for pair in offsets.windows(2) {
                if pair[0] + self.gate_width_ps > pair[1] {
                    return Err(EventSimError::GateOverlap(plan.users()[user].clone()));
                }
            }
            for &o in &offsets {
                if o < 0 || o + self.gate_width_ps > period_ps {
                    return Err(EventSimError::InvalidParam(format!(
                        "gate at offset {o} ps exceeds the period of {period_ps} ps"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Everything but the plan and the link states.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub source: SourceParams,
    pub links: LinkParams,
    /// One detector per user, in plan user order.
    pub detectors: Vec<DetectorParams>,
    /// One analyzer setting per user, in plan user order.
    pub settings: Vec<StationSetting>,
    pub duration_s: f64,
}

/// Per-link bookkeeping of a simulation run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimStats {
    /// Pairs emitted per plan link, whether or not either photon was
    /// detected.
    pub emitted_pairs: Vec<u64>,
}

const DOMAIN_LINK: u64 = 0x4c49_4e4b; // "LINK"
const DOMAIN_DARK: u64 = 0x4441_524b; // "DARK"
const DOMAIN_RUN: u64 = 0x52_554e; // "RUN"

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fold_bytes(seed: u64, bytes: &[u8]) -> u64 {
    let mut acc = seed;
    for &b in bytes {
        acc = mix64(acc ^ u64::from(b));
    }
    acc
}

/// Seed of an independent substream. Links are keyed by their channel pair
/// and detectors by the user name, so streams survive plan edits.
fn substream_seed(master: u64, domain: u64, key: u64) -> u64 {
    mix64(master ^ mix64(domain ^ mix64(key)))
}

fn link_key(signal: i32, idler: i32) -> u64 {
    ((signal as u64) << 32) ^ (idler as u64 & 0xFFFF_FFFF)
}

/// Master seed of run number `index` within a multi-run campaign, derived
/// so runs are mutually independent but reproducible.
pub fn run_seed(master: u64, index: u64) -> u64 {
    substream_seed(master, DOMAIN_RUN, index)
}

fn validate_config(
    plan: &MultiplexPlan,
    states: &BTreeMap<Edge, TwoQubitState>,
    cfg: &SimConfig,
) -> Result<(), EventSimError> {
    cfg.source.validate()?;
    if cfg.duration_s < 0.0 {
        return Err(EventSimError::InvalidParam(format!(
            "duration {} s < 0",
            cfg.duration_s
        )));
    }
    if cfg.detectors.len() != plan.n_users() {
        return Err(EventSimError::InvalidParam(format!(
            "{} detectors configured for {} users",
            cfg.detectors.len(),
            plan.n_users()
        )));
    }
    if cfg.settings.len() != plan.n_users() {
        return Err(EventSimError::InvalidParam(format!(
            "{} settings configured for {} users",
            cfg.settings.len(),
            plan.n_users()
        )));
    }
    for (d, name) in cfg.detectors.iter().zip(plan.users()) {
        d.validate(name)?;
    }
    for link in plan.links() {
        if !states.contains_key(&link.edge) {
            return Err(EventSimError::MissingState(
                plan.users()[link.edge.a].clone(),
                plan.users()[link.edge.b].clone(),
            ));
        }
        cfg.links.transmittance_for(link.pair.signal)?;
        cfg.links.transmittance_for(link.pair.idler)?;
    }
    Ok(())
}

/// Simulates a CW-pumped run; returns one time-ordered stream per user.
///
/// Identical `(seed, inputs)` produce identical output.
pub fn simulate(
    plan: &MultiplexPlan,
    states: &BTreeMap<Edge, TwoQubitState>,
    cfg: &SimConfig,
    seed: u64,
) -> Result<Vec<TimeTagStream>, EventSimError> {
    simulate_detailed(plan, states, cfg, seed).map(|(streams, _)| streams)
}

/// [`simulate`] plus per-link emission statistics for ground-truth audits.
pub fn simulate_detailed(
    plan: &MultiplexPlan,
    states: &BTreeMap<Edge, TwoQubitState>,
    cfg: &SimConfig,
    seed: u64,
) -> Result<(Vec<TimeTagStream>, SimStats), EventSimError> {
    if cfg.source.mode != SourceMode::Cw {
        return Err(EventSimError::WrongMode(
            "simulate() requires a CW source; use simulate_pulsed()".into(),
        ));
    }
    run(plan, states, cfg, None, seed)
}

/// Simulates a pulsed-pump run with gated detectors.
///
/// Pairs are emitted at most once per pulse per link; tags outside a user's
/// gate windows are discarded before the dead-time stage, so a click in one
/// gate still blinds later gates within the dead time.
pub fn simulate_pulsed(
    plan: &MultiplexPlan,
    states: &BTreeMap<Edge, TwoQubitState>,
    cfg: &SimConfig,
    gates: &GateConfig,
    seed: u64,
) -> Result<(Vec<TimeTagStream>, SimStats), EventSimError> {
    let SourceMode::Pulsed { period_ps, .. } = cfg.source.mode else {
        return Err(EventSimError::WrongMode(
            "simulate_pulsed() requires a pulsed source".into(),
        ));
    };
    gates.validate(plan, period_ps)?;
    run(plan, states, cfg, Some(gates), seed)
}

fn run(
    plan: &MultiplexPlan,
    states: &BTreeMap<Edge, TwoQubitState>,
    cfg: &SimConfig,
    gates: Option<&GateConfig>,
    seed: u64,
) -> Result<(Vec<TimeTagStream>, SimStats), EventSimError> {
    validate_config(plan, states, cfg)?;

    let n_users = plan.n_users();
    let mut per_user: Vec<Vec<TimeTag>> = vec![Vec::new(); n_users];
    let mut stats = SimStats {
        emitted_pairs: vec![0; plan.links().len()],
    };

    for (link_idx, link) in plan.links().iter().enumerate() {
        let state = &states[&link.edge];
        stats.emitted_pairs[link_idx] = generate_link_tags(
            link_idx as u16,
            link.edge,
            link.pair.signal,
            link.pair.idler,
            state,
            cfg,
            seed,
            &mut per_user,
        )?;
    }

    for (user, tags) in per_user.iter_mut().enumerate() {
        generate_dark_tags(plan, user, cfg, seed, tags);
    }

    let mut streams = Vec::with_capacity(n_users);
    for (user, mut tags) in per_user.into_iter().enumerate() {
        if let (Some(g), SourceMode::Pulsed { period_ps, .. }) = (gates, cfg.source.mode) {
            let offsets = g.user_offsets(plan, user);
            tags.retain(|t| in_gate(&offsets, g.gate_width_ps, period_ps, t.time_ps));
        }
        if let PortMode::Single(o) = cfg.settings[user].port {
            tags.retain(|t| t.outcome == o);
        }
        tags.sort_unstable();
        let kept = apply_dead_time(&tags, cfg.detectors[user].dead_time_ps)?;
        streams.push(TimeTagStream { tags: kept });
    }
    Ok((streams, stats))
}

/// Emission times of one link for the configured source mode, in seconds.
fn emission_times(rng: &mut ChaCha8Rng, rate_hz: f64, cfg: &SimConfig) -> Vec<f64> {
    let mut times = Vec::new();
    if rate_hz <= 0.0 || cfg.duration_s <= 0.0 {
        return times;
    }
    match cfg.source.mode {
        SourceMode::Cw => {
            let exp = Exp::new(rate_hz).expect("positive rate");
            let mut t = 0.0f64;
            loop {
                t += exp.sample(rng);
                if t >= cfg.duration_s {
                    break;
                }
                times.push(t);
            }
        }
        SourceMode::Pulsed {
            period_ps,
            width_ps,
        } => {
            let period_s = period_ps as f64 / PS_PER_S;
            let mu = rate_hz * period_s;
            let n_pulses = (cfg.duration_s * PS_PER_S / period_ps as f64).floor() as u64;
            let mut k = 0u64;
            while k < n_pulses {
                if mu < 1.0 {
                    // Geometric skip to the next occupied pulse.
                    let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
                    let skip = (u.ln() / (1.0 - mu).ln()).floor();
                    if !skip.is_finite() || skip >= (n_pulses - k) as f64 {
                        break;
                    }
                    k += skip as u64;
                }
                let within = rng.random::<f64>() * width_ps as f64;
                times.push((k as f64 * period_ps as f64 + within) / PS_PER_S);
                k += 1;
            }
        }
    }
    times
}

#[allow(clippy::too_many_arguments)]
fn generate_link_tags(
    link_idx: u16,
    edge: Edge,
    signal_ch: i32,
    idler_ch: i32,
    state: &TwoQubitState,
    cfg: &SimConfig,
    master_seed: u64,
    per_user: &mut [Vec<TimeTag>],
) -> Result<u64, EventSimError> {
    let rate = cfg.source.rate_for(edge);
    if let SourceMode::Pulsed { period_ps, .. } = cfg.source.mode {
        let mu = rate * period_ps as f64 / PS_PER_S;
        if mu > 1.0 {
            return Err(EventSimError::PulseOccupancyTooHigh(mu));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(
        master_seed,
        DOMAIN_LINK,
        link_key(signal_ch, idler_ch),
    ));

    let basis_a = cfg.settings[edge.a].basis;
    let basis_b = cfg.settings[edge.b].basis;
    let table = outcome_probs(state, basis_a, basis_b);
    // CDF over the joint outcomes (0,0), (0,1), (1,0), (1,1).
    let c0 = table.p[0][0];
    let c1 = c0 + table.p[0][1];
    let c2 = c1 + table.p[1][0];

    let arms = [
        (
            edge.a,
            cfg.links.transmittance_for(signal_ch)? * cfg.detectors[edge.a].efficiency,
            cfg.links.delay_for(signal_ch),
            basis_a,
        ),
        (
            edge.b,
            cfg.links.transmittance_for(idler_ch)? * cfg.detectors[edge.b].efficiency,
            cfg.links.delay_for(idler_ch),
            basis_b,
        ),
    ];

    let times = emission_times(&mut rng, rate, cfg);
    let emitted = times.len() as u64;

    for (serial, t) in times.into_iter().enumerate() {
        let emission_ps = (t * PS_PER_S).round() as i64;
        let u: f64 = rng.random();
        let joint = if u < c0 {
            (0u8, 0u8)
        } else if u < c1 {
            (0, 1)
        } else if u < c2 {
            (1, 0)
        } else {
            (1, 1)
        };
        for (arm_idx, &(user, survival, delay_ps, basis)) in arms.iter().enumerate() {
            if rng.random::<f64>() >= survival {
                continue;
            }
            let sigma = cfg.detectors[user].jitter_sigma_ps;
            let jitter = if sigma > 0.0 {
                Normal::new(0.0, sigma)
                    .expect("valid sigma")
                    .sample(&mut rng)
            } else {
                0.0
            };
            let outcome = if arm_idx == 0 { joint.0 } else { joint.1 };
            per_user[user].push(TimeTag {
                time_ps: emission_ps + delay_ps + jitter.round() as i64,
                detector: user as u16,
                basis,
                outcome,
                origin: Origin::Pair {
                    link: link_idx,
                    serial: serial as u32,
                },
            });
        }
    }
    Ok(emitted)
}

fn generate_dark_tags(
    plan: &MultiplexPlan,
    user: usize,
    cfg: &SimConfig,
    master_seed: u64,
    out: &mut Vec<TimeTag>,
) {
    let d = &cfg.detectors[user];
    if d.dark_rate_hz <= 0.0 || cfg.duration_s <= 0.0 {
        return;
    }
    let key = fold_bytes(0, plan.users()[user].as_bytes());
    let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(master_seed, DOMAIN_DARK, key));
    let exp = Exp::new(d.dark_rate_hz).expect("positive rate");
    let setting = cfg.settings[user];
    let mut t = 0.0f64;
    loop {
        t += exp.sample(&mut rng);
        if t >= cfg.duration_s {
            break;
        }
        let outcome = match setting.port {
            PortMode::Dual => u8::from(rng.random_bool(0.5)),
            PortMode::Single(o) => o,
        };
        out.push(TimeTag {
            time_ps: (t * PS_PER_S).round() as i64,
            detector: user as u16,
            basis: setting.basis,
            outcome,
            origin: Origin::Dark,
        });
    }
}

fn in_gate(offsets: &[i64], width_ps: i64, period_ps: i64, t: i64) -> bool {
    if offsets.is_empty() {
        return false;
    }
    let r = t.rem_euclid(period_ps);
    // Last gate opening at or before r.
    match offsets.partition_point(|&o| o <= r) {
        0 => false,
        i => r < offsets[i - 1] + width_ps,
    }
}

/// Non-paralyzable dead time: a tag is kept iff it arrives at least
/// `dead_time_ps` after the last kept tag.
pub fn apply_dead_time(tags: &[TimeTag], dead_time_ps: i64) -> Result<Vec<TimeTag>, EventSimError> {
    let mut kept: Vec<TimeTag> = Vec::with_capacity(tags.len());
    let mut last: Option<i64> = None;
    for (i, tag) in tags.iter().enumerate() {
        if i > 0 && tag.time_ps < tags[i - 1].time_ps {
            return Err(EventSimError::UnsortedStream(i));
        }
        match last {
            Some(t) if tag.time_ps - t < dead_time_ps => {}
            _ => {
                kept.push(*tag);
                last = Some(tag.time_ps);
            }
        }
    }
    Ok(kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netplan::{allocate, conjugate_pairs, Topology, WavelengthGrid};
    use std::collections::BTreeSet;

    fn two_user_plan() -> MultiplexPlan {
        let topo = Topology::full_mesh(vec!["A", "B"]).unwrap();
        let grid = WavelengthGrid::default();
        let channels: BTreeSet<i32> = [33, 35].into_iter().collect();
        let pairs = conjugate_pairs(&channels, &grid).unwrap();
        allocate(&topo, &pairs).unwrap()
    }

    fn four_user_plan() -> MultiplexPlan {
        let topo = Topology::full_mesh(vec!["A", "B", "C", "D"]).unwrap();
        let grid = WavelengthGrid::default();
        let channels: BTreeSet<i32> = (27..=32).chain(36..=41).collect();
        let pairs = conjugate_pairs(&channels, &grid).unwrap();
        allocate(&topo, &pairs).unwrap()
    }

    fn phi_states(plan: &MultiplexPlan) -> BTreeMap<Edge, TwoQubitState> {
        plan.links()
            .iter()
            .map(|l| (l.edge, TwoQubitState::phi_plus()))
            .collect()
    }

    fn dual_hv(n: usize) -> Vec<StationSetting> {
        vec![StationSetting::dual(Basis::HV); n]
    }

    fn tag(t: i64) -> TimeTag {
        TimeTag {
            time_ps: t,
            detector: 0,
            basis: Basis::HV,
            outcome: 0,
            origin: Origin::Dark,
        }
    }

    #[test]
    fn dead_time_empty() {
        assert_eq!(apply_dead_time(&[], 1_000_000).unwrap(), vec![]);
    }

    #[test]
    fn dead_time_drops_tags_inside_window() {
        let tags = [tag(0), tag(500_000), tag(1_500_000)];
        let kept = apply_dead_time(&tags, 1_000_000).unwrap();
        let times: Vec<i64> = kept.iter().map(|t| t.time_ps).collect();
        assert_eq!(times, vec![0, 1_500_000]);
    }

    #[test]
    fn dead_time_rejects_unsorted() {
        let tags = [tag(100), tag(50)];
        assert_eq!(
            apply_dead_time(&tags, 10).unwrap_err(),
            EventSimError::UnsortedStream(1)
        );
    }

    #[test]
    fn dead_time_zero_keeps_everything() {
        let tags = [tag(5), tag(5), tag(6)];
        assert_eq!(apply_dead_time(&tags, 0).unwrap().len(), 3);
    }

    /// Non-paralyzable renewal formula, cross-checked against a brute-force
    /// reference implementation.
    #[test]
    fn dead_time_poisson_rate_follows_renewal_formula() {
        let rate = 100_000.0f64;
        let duration = 100.0f64;
        let dead_ps = 1_000_000i64;

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let exp = Exp::new(rate).unwrap();
        let mut tags = Vec::new();
        let mut t = 0.0;
        loop {
            t += exp.sample(&mut rng);
            if t >= duration {
                break;
            }
            tags.push(tag((t * PS_PER_S).round() as i64));
        }

        let kept = apply_dead_time(&tags, dead_ps).unwrap();

        // Reference: independent naive scan.
        let mut brute = Vec::new();
        let mut last = i64::MIN / 2;
        for tg in &tags {
            if tg.time_ps - last >= dead_ps {
                brute.push(*tg);
                last = tg.time_ps;
            }
        }
        assert_eq!(kept, brute);

        let expected = rate / (1.0 + rate * dead_ps as f64 / PS_PER_S) * duration;
        let sigma = expected.sqrt();
        let got = kept.len() as f64;
        assert!(
            (got - expected).abs() < 3.0 * sigma,
            "kept {got}, expected {expected} +- {sigma:.0}"
        );
        // Dead-time invariant on the output.
        for w in kept.windows(2) {
            assert!(w[1].time_ps - w[0].time_ps >= dead_ps);
        }
    }

    #[test]
    fn dark_counts_pure_poisson() {
        let plan = two_user_plan();
        let states = phi_states(&plan);
        let dark = 1000.0;
        let duration = 100.0;
        let cfg = SimConfig {
            source: SourceParams::cw(0.0),
            links: LinkParams::uniform(&plan, 1.0),
            detectors: vec![
                DetectorParams {
                    efficiency: 1.0,
                    dark_rate_hz: dark,
                    dead_time_ps: 0,
                    jitter_sigma_ps: 0.0,
                };
                2
            ],
            settings: dual_hv(2),
            duration_s: duration,
        };
        let streams = simulate(&plan, &states, &cfg, 11).unwrap();
        let expected = dark * duration;
        let bound = 3.0 * expected.sqrt();
        for s in &streams {
            let n = s.len() as f64;
            assert!(
                (n - expected).abs() < bound,
                "dark count {n} vs {expected} +- {bound:.0}"
            );
            assert!(s.tags().iter().all(|t| t.origin == Origin::Dark));
        }
    }

    #[test]
    fn ideal_link_produces_pairwise_equal_streams() {
        let plan = two_user_plan();
        let states = phi_states(&plan);
        let cfg = SimConfig {
            source: SourceParams::cw(10_000.0),
            links: LinkParams::uniform(&plan, 1.0),
            detectors: vec![DetectorParams::ideal(); 2],
            settings: dual_hv(2),
            duration_s: 1.0,
        };
        let streams = simulate(&plan, &states, &cfg, 3).unwrap();
        assert_eq!(streams[0].len(), streams[1].len());
        assert!(!streams[0].is_empty());
        for (a, b) in streams[0].tags().iter().zip(streams[1].tags()) {
            assert_eq!(a.time_ps, b.time_ps);
            assert_eq!(a.origin, b.origin);
            // phi+ in HV never produces anti-correlated outcomes.
            assert_eq!(a.outcome, b.outcome);
        }
    }

    #[test]
    fn identical_seeds_identical_streams() {
        let plan = four_user_plan();
        let states = phi_states(&plan);
        let cfg = SimConfig {
            source: SourceParams::cw(50_000.0),
            links: LinkParams::uniform(&plan, 0.3),
            detectors: vec![
                DetectorParams {
                    efficiency: 0.5,
                    dark_rate_hz: 500.0,
                    dead_time_ps: 1_000_000,
                    jitter_sigma_ps: 200.0,
                };
                4
            ],
            settings: dual_hv(4),
            duration_s: 2.0,
        };
        let a = simulate(&plan, &states, &cfg, 42).unwrap();
        let b = simulate(&plan, &states, &cfg, 42).unwrap();
        assert_eq!(a, b);
        let c = simulate(&plan, &states, &cfg, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn detection_ratio_matches_survival_probability() {
        let plan = two_user_plan();
        let states = phi_states(&plan);
        let transmittance = 0.4;
        let efficiency = 0.5;
        let cfg = SimConfig {
            source: SourceParams::cw(100_000.0),
            links: LinkParams::uniform(&plan, transmittance),
            detectors: vec![
                DetectorParams {
                    efficiency,
                    dark_rate_hz: 0.0,
                    dead_time_ps: 0,
                    jitter_sigma_ps: 0.0,
                };
                2
            ],
            settings: dual_hv(2),
            duration_s: 10.0,
        };
        let (streams, stats) = simulate_detailed(&plan, &states, &cfg, 5).unwrap();
        let emitted = stats.emitted_pairs[0] as f64;
        let p = transmittance * efficiency;
        for s in &streams {
            let detected = s.len() as f64;
            assert!(detected <= emitted);
            let sigma = (emitted * p * (1.0 - p)).sqrt();
            assert!(
                (detected - emitted * p).abs() < 3.0 * sigma,
                "detected {detected}, expected {} +- {sigma:.0}",
                emitted * p
            );
        }
    }

    #[test]
    fn per_channel_delay_shifts_one_arm() {
        let plan = two_user_plan();
        let states = phi_states(&plan);
        let mut links = LinkParams::uniform(&plan, 1.0);
        links.delay_ps.insert(35, 10_000); // idler channel to user B
        let cfg = SimConfig {
            source: SourceParams::cw(10_000.0),
            links,
            detectors: vec![DetectorParams::ideal(); 2],
            settings: dual_hv(2),
            duration_s: 1.0,
        };
        let streams = simulate(&plan, &states, &cfg, 9).unwrap();
        for (a, b) in streams[0].tags().iter().zip(streams[1].tags()) {
            assert_eq!(b.time_ps - a.time_ps, 10_000);
        }
    }

    #[test]
    fn missing_state_is_config_error() {
        let plan = two_user_plan();
        let cfg = SimConfig {
            source: SourceParams::cw(1000.0),
            links: LinkParams::uniform(&plan, 1.0),
            detectors: vec![DetectorParams::ideal(); 2],
            settings: dual_hv(2),
            duration_s: 1.0,
        };
        let err = simulate(&plan, &BTreeMap::new(), &cfg, 1).unwrap_err();
        assert_eq!(err, EventSimError::MissingState("A".into(), "B".into()));
    }

    #[test]
    fn missing_transmittance_is_config_error() {
        let plan = two_user_plan();
        let states = phi_states(&plan);
        let cfg = SimConfig {
            source: SourceParams::cw(1000.0),
            links: LinkParams::default(),
            detectors: vec![DetectorParams::ideal(); 2],
            settings: dual_hv(2),
            duration_s: 1.0,
        };
        let err = simulate(&plan, &states, &cfg, 1).unwrap_err();
        assert_eq!(err, EventSimError::MissingTransmittance(33));
    }

    #[test]
    fn zero_duration_gives_empty_streams() {
        let plan = two_user_plan();
        let states = phi_states(&plan);
        let cfg = SimConfig {
            source: SourceParams::cw(1_000_000.0),
            links: LinkParams::uniform(&plan, 1.0),
            detectors: vec![DetectorParams::ideal(); 2],
            settings: dual_hv(2),
            duration_s: 0.0,
        };
        let streams = simulate(&plan, &states, &cfg, 1).unwrap();
        assert!(streams.iter().all(TimeTagStream::is_empty));
    }

    #[test]
    fn invalid_parameters_rejected() {
        let plan = two_user_plan();
        let states = phi_states(&plan);
        let good = SimConfig {
            source: SourceParams::cw(1_000.0),
            links: LinkParams::uniform(&plan, 1.0),
            detectors: vec![DetectorParams::ideal(); 2],
            settings: dual_hv(2),
            duration_s: 1.0,
        };
        let mut negative_duration = good.clone();
        negative_duration.duration_s = -1.0;
        assert!(matches!(
            simulate(&plan, &states, &negative_duration, 1),
            Err(EventSimError::InvalidParam(_))
        ));
        let mut bad_efficiency = good.clone();
        bad_efficiency.detectors[0].efficiency = 1.5;
        assert!(simulate(&plan, &states, &bad_efficiency, 1).is_err());
        let mut bad_rate = good.clone();
        bad_rate.source.pair_rate_per_link_hz = -5.0;
        assert!(simulate(&plan, &states, &bad_rate, 1).is_err());
        let mut bad_transmittance = good.clone();
        bad_transmittance.links.transmittance.insert(33, 1.2);
        assert!(simulate(&plan, &states, &bad_transmittance, 1).is_err());
        let mut wrong_counts = good;
        wrong_counts.detectors.pop();
        assert!(simulate(&plan, &states, &wrong_counts, 1).is_err());
    }

    #[test]
    fn single_port_keeps_only_selected_outcome() {
        let plan = two_user_plan();
        let states = phi_states(&plan);
        let cfg = SimConfig {
            source: SourceParams::cw(50_000.0),
            links: LinkParams::uniform(&plan, 1.0),
            detectors: vec![
                DetectorParams {
                    efficiency: 1.0,
                    dark_rate_hz: 1000.0,
                    dead_time_ps: 0,
                    jitter_sigma_ps: 0.0,
                };
                2
            ],
            settings: vec![
                StationSetting::single(Basis::HV, 0),
                StationSetting::dual(Basis::HV),
            ],
            duration_s: 1.0,
        };
        let streams = simulate(&plan, &states, &cfg, 21).unwrap();
        assert!(streams[0].tags().iter().all(|t| t.outcome == 0));
        assert!(streams[1].tags().iter().any(|t| t.outcome == 1));
        // Roughly half the pair photons exit the selected port.
        let pairs_a = streams[0]
            .tags()
            .iter()
            .filter(|t| t.origin != Origin::Dark)
            .count() as f64;
        let pairs_b = streams[1]
            .tags()
            .iter()
            .filter(|t| t.origin != Origin::Dark)
            .count() as f64;
        assert!((pairs_a - pairs_b / 2.0).abs() < 4.0 * (pairs_b / 2.0).sqrt());
    }

    #[test]
    fn pulsed_dark_thinning_follows_duty_cycle() {
        let plan = two_user_plan();
        let states = phi_states(&plan);
        let period = 1_000_000i64; // 1 us
        let width = 100_000i64; // 100 ns -> duty 0.1 per gate, 1 gate per user
        let dark = 10_000.0;
        let duration = 50.0;
        let cfg = SimConfig {
            source: SourceParams::pulsed(0.0, period, width),
            links: LinkParams::uniform(&plan, 1.0),
            detectors: vec![
                DetectorParams {
                    efficiency: 1.0,
                    dark_rate_hz: dark,
                    dead_time_ps: 0,
                    jitter_sigma_ps: 0.0,
                };
                2
            ],
            settings: dual_hv(2),
            duration_s: duration,
        };
        let gates = GateConfig {
            gate_width_ps: width,
            offsets_ps: plan.links().iter().map(|l| (l.edge, 0i64)).collect(),
        };
        assert!((gates.duty_cycle(&plan, 0, period) - 0.1).abs() < 1e-12);
        let (streams, _) = simulate_pulsed(&plan, &states, &cfg, &gates, 17).unwrap();
        let expected = dark * duration * 0.1;
        let bound = 3.0 * expected.sqrt();
        for s in &streams {
            let n = s.len() as f64;
            assert!(
                (n - expected).abs() < bound,
                "gated dark count {n} vs {expected} +- {bound:.0}"
            );
        }
    }

    #[test]
    fn pulsed_pairs_fall_inside_aligned_gates() {
        let plan = two_user_plan();
        let states = phi_states(&plan);
        let period = 1_000_000i64;
        let width = 2_000i64;
        let cfg = SimConfig {
            source: SourceParams::pulsed(100_000.0, period, 1_000),
            links: LinkParams::uniform(&plan, 1.0),
            detectors: vec![DetectorParams::ideal(); 2],
            settings: dual_hv(2),
            duration_s: 5.0,
        };
        let gates = GateConfig {
            gate_width_ps: width,
            offsets_ps: plan.links().iter().map(|l| (l.edge, 0i64)).collect(),
        };
        let (streams, stats) = simulate_pulsed(&plan, &states, &cfg, &gates, 23).unwrap();
        // Occupancy 0.1: expect roughly duration/period * 0.1 emissions.
        let expected = 5.0e12 / period as f64 * 0.1;
        let emitted = stats.emitted_pairs[0] as f64;
        assert!((emitted - expected).abs() < 4.0 * expected.sqrt());
        // Everything detected: gates aligned with the (zero-delay) link.
        assert_eq!(streams[0].len() as u64, stats.emitted_pairs[0]);
        for t in streams[0].tags() {
            assert!(t.time_ps.rem_euclid(period) < width);
        }
    }

    #[test]
    fn mismatched_gates_suppress_a_link() {
        let plan = two_user_plan();
        let states = phi_states(&plan);
        let period = 1_000_000i64;
        let mut links = LinkParams::uniform(&plan, 1.0);
        links.delay_ps.insert(35, 500_000); // arrival far from the gate
        let cfg = SimConfig {
            source: SourceParams::pulsed(50_000.0, period, 1_000),
            links,
            detectors: vec![DetectorParams::ideal(); 2],
            settings: dual_hv(2),
            duration_s: 5.0,
        };
        let gates = GateConfig {
            gate_width_ps: 2_000,
            offsets_ps: plan.links().iter().map(|l| (l.edge, 0i64)).collect(),
        };
        let (streams, stats) = simulate_pulsed(&plan, &states, &cfg, &gates, 29).unwrap();
        assert!(stats.emitted_pairs[0] > 10_000);
        // User A still sees its photons; user B's arrivals miss the gate.
        assert!(streams[0].len() as u64 == stats.emitted_pairs[0]);
        assert_eq!(streams[1].len(), 0);
    }

    #[test]
    fn overlapping_gates_rejected() {
        let plan = four_user_plan();
        let states = phi_states(&plan);
        let cfg = SimConfig {
            source: SourceParams::pulsed(1000.0, 1_000_000, 100),
            links: LinkParams::uniform(&plan, 1.0),
            detectors: vec![DetectorParams::ideal(); 4],
            settings: dual_hv(4),
            duration_s: 1.0,
        };
        // All three of user A's gates at the same offset.
        let gates = GateConfig {
            gate_width_ps: 1_000,
            offsets_ps: plan.links().iter().map(|l| (l.edge, 0i64)).collect(),
        };
        let err = simulate_pulsed(&plan, &states, &cfg, &gates, 1).unwrap_err();
        assert_eq!(err, EventSimError::GateOverlap("A".into()));
    }

    #[test]
    fn pulse_occupancy_above_one_rejected() {
        let plan = two_user_plan();
        let states = phi_states(&plan);
        let cfg = SimConfig {
            source: SourceParams::pulsed(2_000_000.0, 1_000_000, 100), // mu = 2
            links: LinkParams::uniform(&plan, 1.0),
            detectors: vec![DetectorParams::ideal(); 2],
            settings: dual_hv(2),
            duration_s: 1.0,
        };
        let gates = GateConfig {
            gate_width_ps: 1_000,
            offsets_ps: plan.links().iter().map(|l| (l.edge, 0i64)).collect(),
        };
        assert!(matches!(
            simulate_pulsed(&plan, &states, &cfg, &gates, 1).unwrap_err(),
            EventSimError::PulseOccupancyTooHigh(_)
        ));
    }

    #[test]
    fn wrong_mode_rejected() {
        let plan = two_user_plan();
        let states = phi_states(&plan);
        let mut cfg = SimConfig {
            source: SourceParams::pulsed(1000.0, 1_000_000, 100),
            links: LinkParams::uniform(&plan, 1.0),
            detectors: vec![DetectorParams::ideal(); 2],
            settings: dual_hv(2),
            duration_s: 1.0,
        };
        assert!(matches!(
            simulate(&plan, &states, &cfg, 1),
            Err(EventSimError::WrongMode(_))
        ));
        cfg.source = SourceParams::cw(1000.0);
        let gates = GateConfig {
            gate_width_ps: 1_000,
            offsets_ps: BTreeMap::new(),
        };
        assert!(matches!(
            simulate_pulsed(&plan, &states, &cfg, &gates, 1),
            Err(EventSimError::WrongMode(_))
        ));
    }

    #[test]
    fn streams_respect_dead_time_invariant() {
        let plan = four_user_plan();
        let states = phi_states(&plan);
        let dead = 500_000i64;
        let cfg = SimConfig {
            source: SourceParams::cw(100_000.0),
            links: LinkParams::uniform(&plan, 0.5),
            detectors: vec![
                DetectorParams {
                    efficiency: 0.8,
                    dark_rate_hz: 10_000.0,
                    dead_time_ps: dead,
                    jitter_sigma_ps: 100.0,
                };
                4
            ],
            settings: dual_hv(4),
            duration_s: 2.0,
        };
        let streams = simulate(&plan, &states, &cfg, 99).unwrap();
        for s in &streams {
            assert!(!s.is_empty());
            for w in s.tags().windows(2) {
                assert!(w[1].time_ps - w[0].time_ps >= dead);
            }
        }
    }
}
