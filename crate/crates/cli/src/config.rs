//! TOML run configuration.
//!
//! Flat key-value sections per subsystem; every physical quantity carries
//! its unit in the key name (`dead_time_ns`, `jitter_sigma_ps`, ...) so a
//! config never leaves units to guesswork.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use entnet_core::coincidence::AnalysisConfig;
use entnet_core::eventsim::{
    DetectorParams, GateConfig, LinkParams, SimConfig, SourceMode, SourceParams, StationSetting,
};
use entnet_core::netplan::{
    allocate, conjugate_pairs, Edge, MultiplexPlan, Topology, WavelengthGrid,
};
use entnet_core::quantum::{Basis, TwoQubitState};

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    #[serde(default)]
    pub grid: GridSection,
    pub topology: Option<TopologySection>,
    pub channels: Option<ChannelsSection>,
    pub source: Option<SourceSection>,
    pub links: Option<LinksSection>,
    pub states: Option<StatesSection>,
    #[serde(default)]
    pub detectors: BTreeMap<String, DetectorSection>,
    #[serde(default)]
    pub gates: Option<GatesSection>,
    #[serde(default)]
    pub analysis: AnalysisSection,
    pub run: Option<RunSection>,
    #[serde(default)]
    pub curves: CurvesSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub channel_spacing_ghz: f64,
    pub base_frequency_thz: f64,
    pub center_channel: i32,
    pub pump_wavelength_nm: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        let g = WavelengthGrid::default();
        Self {
            channel_spacing_ghz: g.channel_spacing_ghz,
            base_frequency_thz: g.base_frequency_thz,
            center_channel: g.center_channel,
            pump_wavelength_nm: g.pump_wavelength_nm,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    pub users: Vec<String>,
    #[serde(default)]
    pub full_mesh: bool,
    #[serde(default)]
    pub edges: Vec<[String; 2]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelsSection {
    pub list: Vec<i32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    pub pair_rate_per_link_hz: f64,
    #[serde(default = "default_mode")]
    pub mode: String,
    pub pulse_period_ns: Option<f64>,
    pub pulse_width_ps: Option<f64>,
    /// Per-link overrides keyed `"UserA-UserB"`.
    #[serde(default)]
    pub link_rate_overrides_hz: BTreeMap<String, f64>,
}

fn default_mode() -> String {
    "cw".into()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinksSection {
    #[serde(default = "default_transmittance")]
    pub default_transmittance: f64,
    /// Per-channel overrides, keyed by channel number.
    #[serde(default)]
    pub transmittance: BTreeMap<String, f64>,
    #[serde(default)]
    pub delay_ns: BTreeMap<String, f64>,
}

fn default_transmittance() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatesSection {
    #[serde(default = "default_fidelity")]
    pub default_fidelity_estimate: f64,
    /// Per-link overrides keyed `"UserA-UserB"`.
    #[serde(default)]
    pub fidelity_estimate: BTreeMap<String, f64>,
}

fn default_fidelity() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSection {
    pub efficiency: f64,
    pub dark_rate_hz: f64,
    pub dead_time_ns: f64,
    #[serde(default)]
    pub jitter_sigma_ps: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatesSection {
    pub gate_width_ps: i64,
    /// Gate offset within the pulse period per link, keyed `"UserA-UserB"`.
    #[serde(default)]
    pub offsets_ns: BTreeMap<String, f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub coincidence_window_ps: i64,
    pub histogram_bin_ps: i64,
    pub histogram_range_ns: f64,
    pub peak_sigma: f64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        let a = AnalysisConfig::default();
        Self {
            coincidence_window_ps: a.window_ps,
            histogram_bin_ps: a.hist_bin_ps,
            histogram_range_ns: a.hist_range_ps as f64 / 1000.0,
            peak_sigma: a.peak_sigma,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seed: Option<u64>,
    pub duration_s: f64,
    /// Run all 2^N basis combinations (dual-output analyzers).
    #[serde(default)]
    pub campaign: bool,
    /// Single-run analyzer settings per user: `HV`/`DA` for dual-output
    /// modules, `H`/`V`/`D`/`A` for a single-output port.
    #[serde(default)]
    pub settings: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurvesSection {
    pub n_users: Vec<usize>,
    pub window_ps: Vec<i64>,
    pub total_pair_rate_hz: f64,
    pub dark_rate_hz: f64,
    pub loss_db_max: f64,
    pub loss_db_step: f64,
    /// Explicit efficiency grid; overrides the loss grid when present.
    pub eta_list: Vec<f64>,
}

impl Default for CurvesSection {
    fn default() -> Self {
        Self {
            n_users: (2..=9).collect(),
            window_ps: vec![1_000, 100],
            total_pair_rate_hz: 1.7e6,
            dark_rate_hz: 500.0,
            loss_db_max: 60.0,
            loss_db_step: 0.5,
            eta_list: Vec::new(),
        }
    }
}

pub fn load(path: &Path) -> Result<RunConfigFile, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

impl RunConfigFile {
    pub fn grid(&self) -> WavelengthGrid {
        WavelengthGrid {
            channel_spacing_ghz: self.grid.channel_spacing_ghz,
            base_frequency_thz: self.grid.base_frequency_thz,
            center_channel: self.grid.center_channel,
            pump_wavelength_nm: self.grid.pump_wavelength_nm,
        }
    }

    pub fn topology(&self) -> Result<Topology, CliError> {
        let t = self
            .topology
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [topology] section".into()))?;
        if t.full_mesh && !t.edges.is_empty() {
            return Err(CliError::Config(
                "[topology] cannot set both full_mesh and an edge list".into(),
            ));
        }
        if t.full_mesh {
            return Ok(Topology::full_mesh(t.users.clone())?);
        }
        if t.edges.is_empty() {
            return Err(CliError::Config(
                "[topology] needs full_mesh = true or an edge list".into(),
            ));
        }
        let mut pairs = Vec::new();
        for [a, b] in &t.edges {
            let find = |name: &str| {
                t.users
                    .iter()
                    .position(|u| u == name)
                    .ok_or_else(|| CliError::Config(format!("unknown user {name:?} in edges")))
            };
            pairs.push((find(a)?, find(b)?));
        }
        Ok(Topology::new(t.users.clone(), &pairs)?)
    }

    pub fn build_plan(&self) -> Result<(WavelengthGrid, MultiplexPlan), CliError> {
        let grid = self.grid();
        let topo = self.topology()?;
        let channels = self
            .channels
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [channels] section".into()))?
            .list
            .iter()
            .copied()
            .collect();
        let pairs = conjugate_pairs(&channels, &grid)?;
        let plan = allocate(&topo, &pairs)?;
        Ok((grid, plan))
    }

    fn edge_by_name(&self, plan: &MultiplexPlan, key: &str) -> Result<Edge, CliError> {
        let (a, b) = key
            .split_once('-')
            .ok_or_else(|| CliError::Config(format!("link key {key:?} is not \"UserA-UserB\"")))?;
        let find = |name: &str| {
            plan.users()
                .iter()
                .position(|u| u == name)
                .ok_or_else(|| CliError::Config(format!("unknown user {name:?} in link {key:?}")))
        };
        let edge = Edge::new(find(a)?, find(b)?);
        if plan.link_index(edge).is_none() {
            return Err(CliError::Config(format!("{key:?} is not a planned link")));
        }
        Ok(edge)
    }

    pub fn states(&self, plan: &MultiplexPlan) -> Result<BTreeMap<Edge, TwoQubitState>, CliError> {
        let section = self
            .states
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [states] section".into()))?;
        let mut per_edge: BTreeMap<Edge, f64> = plan
            .links()
            .iter()
            .map(|l| (l.edge, section.default_fidelity_estimate))
            .collect();
        for (key, &f) in &section.fidelity_estimate {
            let edge = self.edge_by_name(plan, key)?;
            per_edge.insert(edge, f);
        }
        per_edge
            .into_iter()
            .map(|(e, f)| {
                TwoQubitState::werner_from_fidelity_estimate(f)
                    .map(|s| (e, s))
                    .map_err(|err| CliError::Config(err.to_string()))
            })
            .collect()
    }

    pub fn link_params(&self, plan: &MultiplexPlan) -> Result<LinkParams, CliError> {
        let section = self
            .links
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [links] section".into()))?;
        let mut params = LinkParams::uniform(plan, section.default_transmittance);
        let parse_channel = |key: &str| {
            key.parse::<i32>()
                .map_err(|_| CliError::Config(format!("channel key {key:?} is not an integer")))
        };
        for (key, &t) in &section.transmittance {
            params.transmittance.insert(parse_channel(key)?, t);
        }
        for (key, &ns) in &section.delay_ns {
            params
                .delay_ps
                .insert(parse_channel(key)?, (ns * 1_000.0).round() as i64);
        }
        Ok(params)
    }

    pub fn source(&self, plan: &MultiplexPlan) -> Result<SourceParams, CliError> {
        let section = self
            .source
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [source] section".into()))?;
        let mode = match section.mode.as_str() {
            "cw" => SourceMode::Cw,
            "pulsed" => {
                let period = section.pulse_period_ns.ok_or_else(|| {
                    CliError::Config("pulsed source needs pulse_period_ns".into())
                })?;
                let width = section
                    .pulse_width_ps
                    .ok_or_else(|| CliError::Config("pulsed source needs pulse_width_ps".into()))?;
                SourceMode::Pulsed {
                    period_ps: (period * 1_000.0).round() as i64,
                    width_ps: width.round() as i64,
                }
            }
            other => {
                return Err(CliError::Config(format!(
                    "source mode {other:?} is neither \"cw\" nor \"pulsed\""
                )))
            }
        };
        let mut overrides = BTreeMap::new();
        for (key, &rate) in &section.link_rate_overrides_hz {
            overrides.insert(self.edge_by_name(plan, key)?, rate);
        }
        Ok(SourceParams {
            pair_rate_per_link_hz: section.pair_rate_per_link_hz,
            link_rate_overrides: overrides,
            mode,
        })
    }

    pub fn detectors(&self, plan: &MultiplexPlan) -> Result<Vec<DetectorParams>, CliError> {
        plan.users()
            .iter()
            .map(|name| {
                let d = self.detectors.get(name).ok_or_else(|| {
                    CliError::Config(format!("missing [detectors.{name}] section"))
                })?;
                Ok(DetectorParams {
                    efficiency: d.efficiency,
                    dark_rate_hz: d.dark_rate_hz,
                    dead_time_ps: (d.dead_time_ns * 1_000.0).round() as i64,
                    jitter_sigma_ps: d.jitter_sigma_ps,
                })
            })
            .collect()
    }

    pub fn gate_config(&self, plan: &MultiplexPlan) -> Result<Option<GateConfig>, CliError> {
        let Some(section) = &self.gates else {
            return Ok(None);
        };
        let mut offsets: BTreeMap<Edge, i64> =
            plan.links().iter().map(|l| (l.edge, 0i64)).collect();
        for (key, &ns) in &section.offsets_ns {
            offsets.insert(self.edge_by_name(plan, key)?, (ns * 1_000.0).round() as i64);
        }
        Ok(Some(GateConfig {
            gate_width_ps: section.gate_width_ps,
            offsets_ps: offsets,
        }))
    }

    pub fn analysis(&self) -> AnalysisConfig {
        AnalysisConfig {
            window_ps: self.analysis.coincidence_window_ps,
            hist_bin_ps: self.analysis.histogram_bin_ps,
            hist_range_ps: (self.analysis.histogram_range_ns * 1_000.0).round() as i64,
            peak_sigma: self.analysis.peak_sigma,
        }
    }

    pub fn run_section(&self) -> Result<&RunSection, CliError> {
        self.run
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [run] section".into()))
    }

    /// Settings of every run: labels for the manifest plus the per-user
    /// station settings.
    pub fn runs(&self, plan: &MultiplexPlan) -> Result<Vec<RunPlan>, CliError> {
        let run = self.run_section()?;
        if run.campaign {
            if !run.settings.is_empty() {
                return Err(CliError::Config(
                    "[run] sets both campaign = true and explicit settings".into(),
                ));
            }
            return Ok(entnet_core::coincidence::all_basis_combos(plan.n_users())
                .into_iter()
                .map(|combo| RunPlan {
                    labels: combo.iter().map(Basis::to_string).collect(),
                    settings: combo.iter().map(|&b| StationSetting::dual(b)).collect(),
                })
                .collect());
        }
        if run.settings.len() != plan.n_users() {
            return Err(CliError::Config(format!(
                "[run] settings must name all {} users (or set campaign = true)",
                plan.n_users()
            )));
        }
        let settings = run
            .settings
            .iter()
            .map(|s| parse_setting(s))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(vec![RunPlan {
            labels: run.settings.clone(),
            settings,
        }])
    }

    pub fn sim_config(
        &self,
        plan: &MultiplexPlan,
        settings: Vec<StationSetting>,
    ) -> Result<SimConfig, CliError> {
        Ok(SimConfig {
            source: self.source(plan)?,
            links: self.link_params(plan)?,
            detectors: self.detectors(plan)?,
            settings,
            duration_s: self.run_section()?.duration_s,
        })
    }
}

/// One simulated run: manifest labels plus station settings.
pub struct RunPlan {
    pub labels: Vec<String>,
    pub settings: Vec<StationSetting>,
}

pub fn parse_setting(s: &str) -> Result<StationSetting, CliError> {
    Ok(match s {
        "HV" => StationSetting::dual(Basis::HV),
        "DA" => StationSetting::dual(Basis::DA),
        "H" => StationSetting::single(Basis::HV, 0),
        "V" => StationSetting::single(Basis::HV, 1),
        "D" => StationSetting::single(Basis::DA, 0),
        "A" => StationSetting::single(Basis::DA, 1),
        other => {
            return Err(CliError::Config(format!(
                "setting {other:?} is not one of HV, DA, H, V, D, A"
            )))
        }
    })
}

/// Basis of a manifest setting label.
pub fn basis_of_label(label: &str) -> Result<Basis, CliError> {
    Ok(match label {
        "HV" | "H" | "V" => Basis::HV,
        "DA" | "D" | "A" => Basis::DA,
        other => return Err(CliError::Parse(format!("bad setting label {other:?}"))),
    })
}
