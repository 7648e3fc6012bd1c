//! Coincidence analysis: from time-tag streams to link metrics.
//!
//! The pipeline mirrors how entangled links are identified and qualified in
//! the lab: cross-correlate two detectors' time traces, locate the
//! coincidence peak, count coincidences at that delay within a window, and
//! derive visibilities, fidelity, QBER and key rates from outcome-resolved
//! counts accumulated over a basis-setting campaign.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::eventsim::{TimeTag, TimeTagStream, PS_PER_S};
use crate::netplan::{Edge, MultiplexPlan};
use crate::quantum::Basis;

/// Links with a fidelity above this threshold can distill a positive secure
/// key; kept as its own constant, independent of the key-rate formula's own
/// QBER zero crossing.
pub const KEY_FIDELITY_THRESHOLD: f64 = 0.81;

#[derive(Debug, Error, PartialEq)]
pub enum CoincidenceError {
    #[error("stream is not sorted at index {0}")]
    UnsortedStream(usize),
    #[error("invalid analysis config: {0}")]
    InvalidConfig(String),
    #[error("no link detected: no significant correlation peak")]
    NoSignificantPeak,
    #[error("no link detected for {a}-{b}")]
    NoLinkDetected { a: String, b: String },
    #[error("campaign is missing setting combinations: {}", .0.join("; "))]
    MissingRuns(Vec<String>),
    #[error("campaign runs have unequal durations")]
    MismatchedDurations,
    #[error("run has {got} streams for {expected} users")]
    WrongStreamCount { expected: usize, got: usize },
}

/// Knobs of the analysis stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnalysisConfig {
    /// Coincidence window tau in ps; a pair matches when
    /// `|t_b - t_a - delay| <= tau/2`.
    pub window_ps: i64,
    /// Correlation histogram bin width in ps.
    pub hist_bin_ps: i64,
    /// Total histogram span in ps, centered on zero delay.
    pub hist_range_ps: i64,
    /// Peak significance threshold in standard deviations above the floor.
    pub peak_sigma: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            window_ps: 1_000,
            hist_bin_ps: 100,
            hist_range_ps: 100_000,
            peak_sigma: 5.0,
        }
    }
}

impl AnalysisConfig {
    fn validate(&self) -> Result<(), CoincidenceError> {
        if self.window_ps <= 0 {
            return Err(CoincidenceError::InvalidConfig(
                "coincidence window must be positive".into(),
            ));
        }
        if self.hist_bin_ps <= 0 || self.hist_range_ps <= 0 {
            return Err(CoincidenceError::InvalidConfig(
                "histogram bin and range must be positive".into(),
            ));
        }
        if self.hist_range_ps % self.hist_bin_ps != 0 {
            return Err(CoincidenceError::InvalidConfig(format!(
                "histogram range {} ps is not a multiple of the bin width {} ps",
                self.hist_range_ps, self.hist_bin_ps
            )));
        }
        Ok(())
    }

    pub fn window_s(&self) -> f64 {
        self.window_ps as f64 / PS_PER_S
    }
}

/// Histogram of arrival-time differences `t_b - t_a`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationHistogram {
    pub bin_ps: i64,
    pub range_ps: i64,
    pub counts: Vec<u64>,
}

impl CorrelationHistogram {
    fn empty(cfg: &AnalysisConfig) -> Self {
        Self {
            bin_ps: cfg.hist_bin_ps,
            range_ps: cfg.hist_range_ps,
            counts: vec![0; (cfg.hist_range_ps / cfg.hist_bin_ps) as usize],
        }
    }

    /// Lowest delay covered (inclusive).
    pub fn min_delay_ps(&self) -> i64 {
        -self.range_ps / 2
    }

    pub fn bin_center_ps(&self, bin: usize) -> i64 {
        self.min_delay_ps() + bin as i64 * self.bin_ps + self.bin_ps / 2
    }

    /// Accumulates another histogram with identical binning.
    pub fn merge(&mut self, other: &CorrelationHistogram) {
        assert_eq!(self.bin_ps, other.bin_ps);
        assert_eq!(self.range_ps, other.range_ps);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    /// Two-column CSV dump (`delay_ps,counts`) for plotting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("delay_ps,counts\n");
        for (i, &c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{},{}\n", self.bin_center_ps(i), c));
        }
        out
    }
}

fn check_sorted(tags: &[TimeTag]) -> Result<(), CoincidenceError> {
    for (i, w) in tags.windows(2).enumerate() {
        if w[1].time_ps < w[0].time_ps {
            return Err(CoincidenceError::UnsortedStream(i + 1));
        }
    }
    Ok(())
}

/// Histogram of all pair delays `t_b - t_a` inside the configured range,
/// computed with a sliding two-pointer sweep.
pub fn cross_correlate(
    a: &TimeTagStream,
    b: &TimeTagStream,
    cfg: &AnalysisConfig,
) -> Result<CorrelationHistogram, CoincidenceError> {
    cfg.validate()?;
    check_sorted(a.tags())?;
    check_sorted(b.tags())?;
    let mut hist = CorrelationHistogram::empty(cfg);
    let min_d = hist.min_delay_ps();
    let max_d = min_d + cfg.hist_range_ps; // exclusive
    let bt = b.tags();
    let mut lo = 0usize;
    for ta in a.tags() {
        while lo < bt.len() && bt[lo].time_ps - ta.time_ps < min_d {
            lo += 1;
        }
        for tb in &bt[lo..] {
            let d = tb.time_ps - ta.time_ps;
            if d >= max_d {
                break;
            }
            let bin = ((d - min_d) / cfg.hist_bin_ps) as usize;
            hist.counts[bin] += 1;
        }
    }
    Ok(hist)
}

/// Delay of the correlation peak, provided it stands out of the accidental
/// floor by the configured significance.
///
/// The floor is the mean of all bins excluding the peak and its direct
/// neighbors. Non-partner detector combinations are expected to fail with
/// [`CoincidenceError::NoSignificantPeak`].
pub fn find_delay(
    hist: &CorrelationHistogram,
    cfg: &AnalysisConfig,
) -> Result<i64, CoincidenceError> {
    if hist.counts.is_empty() {
        return Err(CoincidenceError::NoSignificantPeak);
    }
    let (peak_bin, &peak) = hist
        .counts
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| a.cmp(b).then(ib.cmp(ia)))
        .expect("non-empty");
    let mut floor_sum = 0u64;
    let mut floor_n = 0u64;
    for (i, &c) in hist.counts.iter().enumerate() {
        if i + 1 >= peak_bin && i <= peak_bin + 1 {
            continue;
        }
        floor_sum += c;
        floor_n += 1;
    }
    let floor = if floor_n > 0 {
        floor_sum as f64 / floor_n as f64
    } else {
        0.0
    };
    let threshold = floor + cfg.peak_sigma * floor.max(1.0).sqrt();
    if (peak as f64) < threshold {
        return Err(CoincidenceError::NoSignificantPeak);
    }
    Ok(hist.bin_center_ps(peak_bin))
}

/// Coincidences found by greedy earliest-match pairing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchedPairs {
    /// Index pairs `(i into a, j into b)` of matched tags.
    pub pairs: Vec<(usize, usize)>,
}

impl MatchedPairs {
    pub fn count(&self) -> u64 {
        self.pairs.len() as u64
    }
}

/// Pairs tags of two streams with `|t_b - t_a - delay| <= window/2`, each
/// tag used at most once, earliest candidates matched first.
pub fn count_coincidences(
    a: &TimeTagStream,
    b: &TimeTagStream,
    delay_ps: i64,
    window_ps: i64,
) -> Result<MatchedPairs, CoincidenceError> {
    check_sorted(a.tags())?;
    check_sorted(b.tags())?;
    let half = window_ps / 2;
    let bt = b.tags();
    let mut pairs = Vec::new();
    let mut j = 0usize;
    for (i, ta) in a.tags().iter().enumerate() {
        let lower = ta.time_ps + delay_ps - half;
        let upper = ta.time_ps + delay_ps + half;
        while j < bt.len() && bt[j].time_ps < lower {
            j += 1;
        }
        if j < bt.len() && bt[j].time_ps <= upper {
            pairs.push((i, j));
            j += 1;
        }
    }
    Ok(MatchedPairs { pairs })
}

/// Expected accidental coincidences `tau * S_a * S_b * T` between two
/// uncorrelated streams.
pub fn estimate_accidentals(s_a_hz: f64, s_b_hz: f64, window_s: f64, duration_s: f64) -> f64 {
    window_s * s_a_hz * s_b_hz * duration_s
}

/// Removes every tag participating in a cluster of at least 3 tags spanning
/// at least 3 detectors within the window; pairwise events survive.
///
/// Clusters are maximal groups of tags in which consecutive arrivals (over
/// the merged streams) are no more than `window_ps` apart.
pub fn multiuser_filter(streams: &[TimeTagStream], window_ps: i64) -> Vec<TimeTagStream> {
    let mut merged: Vec<(i64, usize, usize)> = Vec::new(); // (time, stream, index)
    for (s, stream) in streams.iter().enumerate() {
        for (i, t) in stream.tags().iter().enumerate() {
            merged.push((t.time_ps, s, i));
        }
    }
    merged.sort_unstable();

    let mut drop: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); streams.len()];
    {
        let flush = |lo: usize, hi: usize, drop: &mut Vec<BTreeSet<usize>>| {
            let cluster = &merged[lo..hi];
            if cluster.len() < 3 {
                return;
            }
            let detectors: BTreeSet<usize> = cluster.iter().map(|&(_, s, _)| s).collect();
            if detectors.len() < 3 {
                return;
            }
            for &(_, s, i) in cluster {
                drop[s].insert(i);
            }
        };
        let mut cluster_start = 0usize;
        for k in 1..=merged.len() {
            let boundary = k == merged.len() || merged[k].0 - merged[k - 1].0 > window_ps;
            if boundary {
                flush(cluster_start, k, &mut drop);
                cluster_start = k;
            }
        }
    }

    streams
        .iter()
        .enumerate()
        .map(|(s, stream)| {
            let keep: Vec<TimeTag> = stream
                .tags()
                .iter()
                .enumerate()
                .filter(|(i, _)| !drop[s].contains(i))
                .map(|(_, t)| *t)
                .collect();
            TimeTagStream::new(keep).expect("filtering preserves order")
        })
        .collect()
}

/// Public-announcement cleanup for one link: removes from each endpoint
/// stream every tag that coincides (within `window_ps / 2`) with a tag of
/// any third detector.
///
/// After announcing time tags, users analyzing link `edge` can discard
/// counts identified as belonging to other links; what remains carries the
/// per-link noise floor of the scaling model. Streams are assumed
/// delay-aligned.
pub fn third_party_filter(
    streams: &[TimeTagStream],
    edge: Edge,
    window_ps: i64,
) -> (TimeTagStream, TimeTagStream) {
    let mut others: Vec<i64> = streams
        .iter()
        .enumerate()
        .filter(|(s, _)| !edge.touches(*s))
        .flat_map(|(_, st)| st.tags().iter().map(|t| t.time_ps))
        .collect();
    others.sort_unstable();
    let half = window_ps / 2;
    let strip = |stream: &TimeTagStream| {
        stream.filtered(|t| {
            let i = others.partition_point(|&o| o < t.time_ps - half);
            !(i < others.len() && others[i] <= t.time_ps + half)
        })
    };
    (strip(&streams[edge.a]), strip(&streams[edge.b]))
}

/// Binary entropy in bits; 0 at the endpoints by convention.
pub fn binary_entropy(q: f64) -> f64 {
    if q <= 0.0 || q >= 1.0 {
        return 0.0;
    }
    -q * q.log2() - (1.0 - q) * (1.0 - q).log2()
}

/// Asymptotic entanglement-based secure key rate
/// `raw * max(0, 1 - (1 + ec_efficiency) * H2(qber))`.
pub fn secure_key_rate_with_efficiency(raw_hz: f64, qber: f64, ec_efficiency: f64) -> f64 {
    if qber >= 0.5 {
        return 0.0;
    }
    let fraction = 1.0 - (1.0 + ec_efficiency) * binary_entropy(qber);
    raw_hz * fraction.max(0.0)
}

/// [`secure_key_rate_with_efficiency`] at unit error-correction efficiency:
/// `raw * max(0, 1 - 2 H2(qber))`.
pub fn secure_key_rate(raw_hz: f64, qber: f64) -> f64 {
    secure_key_rate_with_efficiency(raw_hz, qber, 1.0)
}

/// Two-basis lower bound on the Bell-state fidelity, `(V_HV + V_DA) / 2`.
pub fn fidelity_estimate(v_hv: f64, v_da: f64) -> f64 {
    (v_hv + v_da) / 2.0
}

/// Outcome-resolved coincidence counts for one basis.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct OutcomeCounts {
    /// `cells[oa][ob]`: coincidences with outcome `oa` on the first user and
    /// `ob` on the second.
    pub cells: [[u64; 2]; 2],
    /// Estimated accidental share of each cell.
    pub accidental_cells: [[f64; 2]; 2],
}

impl OutcomeCounts {
    pub fn same(&self) -> u64 {
        self.cells[0][0] + self.cells[1][1]
    }

    pub fn diff(&self) -> u64 {
        self.cells[0][1] + self.cells[1][0]
    }

    pub fn total(&self) -> u64 {
        self.same() + self.diff()
    }

    pub fn accidentals(&self) -> f64 {
        self.accidental_cells.iter().flatten().sum()
    }

    fn visibility_raw(&self) -> f64 {
        let same = self.same() as f64;
        let diff = self.diff() as f64;
        if same + diff == 0.0 {
            return 0.0;
        }
        (same - diff) / (same + diff)
    }

    /// Visibility after subtracting the accidental estimate from each cell,
    /// clamped at zero.
    fn visibility_corrected(&self) -> f64 {
        let cell = |oa: usize, ob: usize| {
            (self.cells[oa][ob] as f64 - self.accidental_cells[oa][ob]).max(0.0)
        };
        let same = cell(0, 0) + cell(1, 1);
        let diff = cell(0, 1) + cell(1, 0);
        if same + diff == 0.0 {
            return 0.0;
        }
        (same - diff) / (same + diff)
    }
}

/// Per-link results of a measurement campaign.
#[derive(Debug, Clone, Serialize)]
pub struct LinkMetrics {
    pub edge: Edge,
    pub delay_ps: i64,
    /// Matched-basis coincidences, both bases.
    pub coincidences: u64,
    /// Estimated accidental share of `coincidences`.
    pub accidentals: f64,
    pub counts_hv: OutcomeCounts,
    pub counts_da: OutcomeCounts,
    pub singles_a_hz: f64,
    pub singles_b_hz: f64,
    pub v_hv: f64,
    pub v_da: f64,
    pub v_hv_corrected: f64,
    pub v_da_corrected: f64,
    pub fidelity_raw: f64,
    pub fidelity_corrected: f64,
    /// Key-basis (HV) error ratio of the uncorrected counts.
    pub qber: f64,
    /// Sifted (matched-basis) coincidence rate.
    pub raw_key_hz: f64,
    pub secure_key_hz: f64,
    /// Whether the uncorrected fidelity clears [`KEY_FIDELITY_THRESHOLD`].
    pub key_capable: bool,
}

/// One run of a basis-setting campaign: fixed analyzer bases, one stream per
/// user.
#[derive(Debug, Clone)]
pub struct CampaignRun {
    pub settings: Vec<Basis>,
    pub duration_s: f64,
    pub streams: Vec<TimeTagStream>,
}

fn combo_label(settings: &[Basis]) -> String {
    settings
        .iter()
        .map(Basis::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

/// All `2^n` basis combinations, HV-first within each position.
pub fn all_basis_combos(n_users: usize) -> Vec<Vec<Basis>> {
    (0..1u32 << n_users)
        .map(|mask| {
            (0..n_users)
                .map(|u| {
                    if mask >> u & 1 == 0 {
                        Basis::HV
                    } else {
                        Basis::DA
                    }
                })
                .collect()
        })
        .collect()
}

/// Aggregates a full basis-setting campaign into per-link metrics.
///
/// Expects one run per basis combination (all `2^N`), equal durations. The
/// coincidence peak of each link is located on the histogram summed over all
/// runs; outcome-resolved counting then runs per matched-basis run.
pub fn campaign_metrics(
    runs: &[CampaignRun],
    plan: &MultiplexPlan,
    cfg: &AnalysisConfig,
) -> Result<BTreeMap<Edge, LinkMetrics>, CoincidenceError> {
    cfg.validate()?;
    let n = plan.n_users();
    for run in runs {
        if run.streams.len() != n || run.settings.len() != n {
            return Err(CoincidenceError::WrongStreamCount {
                expected: n,
                got: run.streams.len(),
            });
        }
    }
    if runs.is_empty() {
        return Err(CoincidenceError::MissingRuns(
            all_basis_combos(n).iter().map(|c| combo_label(c)).collect(),
        ));
    }
    let duration = runs[0].duration_s;
    if runs
        .iter()
        .any(|r| (r.duration_s - duration).abs() > 1e-9 * duration.max(1.0))
    {
        return Err(CoincidenceError::MismatchedDurations);
    }
    let present: BTreeSet<String> = runs.iter().map(|r| combo_label(&r.settings)).collect();
    let missing: Vec<String> = all_basis_combos(n)
        .iter()
        .map(|c| combo_label(c))
        .filter(|label| !present.contains(label))
        .collect();
    if !missing.is_empty() {
        return Err(CoincidenceError::MissingRuns(missing));
    }

    let mut metrics = BTreeMap::new();
    for link in plan.links() {
        let (a, b) = (link.edge.a, link.edge.b);

        // Delay from the histogram accumulated over every run: the temporal
        // peak does not depend on the analyzer bases.
        let mut hist = CorrelationHistogram::empty(cfg);
        for run in runs {
            hist.merge(&cross_correlate(&run.streams[a], &run.streams[b], cfg)?);
        }
        let delay_ps = find_delay(&hist, cfg).map_err(|_| CoincidenceError::NoLinkDetected {
            a: plan.users()[a].clone(),
            b: plan.users()[b].clone(),
        })?;

        let mut counts_hv = OutcomeCounts::default();
        let mut counts_da = OutcomeCounts::default();
        let mut matched_time_s = 0.0f64;
        let mut singles_a = 0u64;
        let mut singles_b = 0u64;
        for run in runs {
            singles_a += run.streams[a].len() as u64;
            singles_b += run.streams[b].len() as u64;
            if run.settings[a] != run.settings[b] {
                continue;
            }
            let counts = match run.settings[a] {
                Basis::HV => &mut counts_hv,
                Basis::DA => &mut counts_da,
            };
            matched_time_s += run.duration_s;
            let sa = &run.streams[a];
            let sb = &run.streams[b];
            let matched = count_coincidences(sa, sb, delay_ps, cfg.window_ps)?;
            for &(i, j) in &matched.pairs {
                let oa = sa.tags()[i].outcome as usize;
                let ob = sb.tags()[j].outcome as usize;
                counts.cells[oa][ob] += 1;
            }
            // Accidental share per outcome cell from the per-outcome singles
            // rates of this run.
            for oa in 0..2 {
                for ob in 0..2 {
                    let ra = sa
                        .tags()
                        .iter()
                        .filter(|t| t.outcome as usize == oa)
                        .count() as f64
                        / run.duration_s;
                    let rb = sb
                        .tags()
                        .iter()
                        .filter(|t| t.outcome as usize == ob)
                        .count() as f64
                        / run.duration_s;
                    counts.accidental_cells[oa][ob] +=
                        estimate_accidentals(ra, rb, cfg.window_s(), run.duration_s);
                }
            }
        }

        let total_time = duration * runs.len() as f64;
        let v_hv = counts_hv.visibility_raw();
        let v_da = counts_da.visibility_raw();
        let v_hv_corrected = counts_hv.visibility_corrected();
        let v_da_corrected = counts_da.visibility_corrected();
        let fidelity_raw = fidelity_estimate(v_hv, v_da);
        let fidelity_corrected = fidelity_estimate(v_hv_corrected, v_da_corrected);
        let hv_total = counts_hv.total();
        let qber = if hv_total > 0 {
            counts_hv.diff() as f64 / hv_total as f64
        } else {
            0.0
        };
        let coincidences = hv_total + counts_da.total();
        let raw_key_hz = if matched_time_s > 0.0 {
            coincidences as f64 / matched_time_s
        } else {
            0.0
        };
        metrics.insert(
            link.edge,
            LinkMetrics {
                edge: link.edge,
                delay_ps,
                coincidences,
                accidentals: counts_hv.accidentals() + counts_da.accidentals(),
                counts_hv,
                counts_da,
                singles_a_hz: singles_a as f64 / total_time,
                singles_b_hz: singles_b as f64 / total_time,
                v_hv,
                v_da,
                v_hv_corrected,
                v_da_corrected,
                fidelity_raw,
                fidelity_corrected,
                qber,
                raw_key_hz,
                secure_key_hz: secure_key_rate(raw_key_hz, qber),
                key_capable: fidelity_raw > KEY_FIDELITY_THRESHOLD,
            },
        );
    }
    Ok(metrics)
}

/// CSV header matching [`metrics_csv_row`].
pub fn metrics_csv_header() -> &'static str {
    "edge,delay_ps,coincidences,accidentals,v_hv,v_da,f_raw,f_corrected,qber,raw_hz,secure_hz,key_capable"
}

pub fn metrics_csv_row(m: &LinkMetrics, plan: &MultiplexPlan) -> String {
    format!(
        "{}-{},{},{},{:.3},{:.6},{:.6},{:.6},{:.6},{:.6},{:.4},{:.4},{}",
        plan.users()[m.edge.a],
        plan.users()[m.edge.b],
        m.delay_ps,
        m.coincidences,
        m.accidentals,
        m.v_hv,
        m.v_da,
        m.fidelity_raw,
        m.fidelity_corrected,
        m.qber,
        m.raw_key_hz,
        m.secure_key_hz,
        m.key_capable,
    )
}

/// JSON document with one record per link.
pub fn metrics_json(
    metrics: &BTreeMap<Edge, LinkMetrics>,
    plan: &MultiplexPlan,
) -> serde_json::Value {
    let links: Vec<serde_json::Value> = metrics
        .values()
        .map(|m| {
            let mut v = serde_json::to_value(m).expect("metrics serialize");
            v["edge"] = serde_json::json!([plan.users()[m.edge.a], plan.users()[m.edge.b],]);
            v
        })
        .collect();
    serde_json::json!({ "links": links })
}
