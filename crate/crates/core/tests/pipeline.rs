//! Cross-module integration: simulator output driven through the full
//! analysis pipeline against ground truth and known state parameters.

use std::collections::{BTreeMap, BTreeSet};

use entnet_core::coincidence::{
    all_basis_combos, campaign_metrics, count_coincidences, AnalysisConfig, CampaignRun,
};
use entnet_core::eventsim::{
    simulate, simulate_detailed, DetectorParams, LinkParams, Origin, SimConfig, SourceParams,
    StationSetting,
};
use entnet_core::netplan::{
    allocate, conjugate_pairs, Edge, MultiplexPlan, Topology, WavelengthGrid,
};
use entnet_core::quantum::{visibility, Basis, TwoQubitState};
use entnet_core::refnet::LINK_FIDELITIES;

fn two_user_plan() -> MultiplexPlan {
    let topo = Topology::full_mesh(vec!["A", "B"]).unwrap();
    let channels: BTreeSet<i32> = [33, 35].into_iter().collect();
    let pairs = conjugate_pairs(&channels, &WavelengthGrid::default()).unwrap();
    allocate(&topo, &pairs).unwrap()
}

fn single_link_campaign(
    state: TwoQubitState,
    pair_rate: f64,
    dark: f64,
    duration_s: f64,
    seed: u64,
) -> (MultiplexPlan, Vec<CampaignRun>) {
    let plan = two_user_plan();
    let states: BTreeMap<Edge, TwoQubitState> = plan
        .links()
        .iter()
        .map(|l| (l.edge, state.clone()))
        .collect();
    let mut base = SimConfig {
        source: SourceParams::cw(pair_rate),
        links: LinkParams::uniform(&plan, 1.0),
        detectors: vec![
            DetectorParams {
                efficiency: 1.0,
                dark_rate_hz: dark,
                dead_time_ps: 0,
                jitter_sigma_ps: 100.0,
            };
            2
        ],
        settings: vec![],
        duration_s,
    };
    let runs = all_basis_combos(2)
        .into_iter()
        .enumerate()
        .map(|(i, combo)| {
            base.settings = combo.iter().map(|&b| StationSetting::dual(b)).collect();
            let streams = simulate(&plan, &states, &base, seed ^ ((i as u64) << 40)).unwrap();
            CampaignRun {
                settings: combo,
                duration_s,
                streams,
            }
        })
        .collect();
    (plan, runs)
}

/// Source-grade characterization: a low-noise measurement of each reference
/// link state must reproduce its fidelity estimate within half a percent.
#[test]
fn source_grade_fidelities_reproduce_reference_column() {
    for (i, &f_est) in LINK_FIDELITIES.iter().enumerate() {
        let state = TwoQubitState::werner_from_fidelity_estimate(f_est).unwrap();
        let (plan, runs) = single_link_campaign(state, 2_000.0, 200.0, 6.0, 9_000 + i as u64);
        let metrics = campaign_metrics(&runs, &plan, &AnalysisConfig::default()).unwrap();
        let m = &metrics[&Edge::new(0, 1)];
        assert!(
            (m.fidelity_corrected - f_est).abs() <= 0.005,
            "link {i}: measured {:.4} vs {f_est} (raw {:.4})",
            m.fidelity_corrected,
            m.fidelity_raw
        );
        assert!(m.key_capable);
    }
}

/// The simulated two-basis estimate of werner(0.9) comes out near 0.8667
/// and never above the true fidelity.
#[test]
fn two_basis_estimate_undershoots_true_werner_fidelity() {
    let state = TwoQubitState::werner(0.9).unwrap();
    let exact = (visibility(&state, Basis::HV) + visibility(&state, Basis::DA)) / 2.0;
    assert!((exact - 0.8667).abs() < 1e-4);

    let (plan, runs) = single_link_campaign(state, 2_000.0, 0.0, 6.0, 77);
    let metrics = campaign_metrics(&runs, &plan, &AnalysisConfig::default()).unwrap();
    let m = &metrics[&Edge::new(0, 1)];
    let n = (m.counts_hv.total() + m.counts_da.total()) as f64;
    let sigma = ((1.0 - exact * exact) / n).sqrt();
    assert!(
        (m.fidelity_raw - exact).abs() < 4.0 * sigma,
        "estimate {:.4} vs {exact:.4} +- {sigma:.4}",
        m.fidelity_raw
    );
    assert!(m.fidelity_raw <= 0.9 + 4.0 * sigma);
}

/// With zero jitter and a tight window, coincidence counting recovers
/// exactly the pairs whose photons were both detected.
#[test]
fn tight_window_counting_recovers_ground_truth_exactly() {
    let plan = two_user_plan();
    let states: BTreeMap<Edge, TwoQubitState> = plan
        .links()
        .iter()
        .map(|l| (l.edge, TwoQubitState::phi_plus()))
        .collect();
    let cfg = SimConfig {
        source: SourceParams::cw(50_000.0),
        links: LinkParams::uniform(&plan, 0.6),
        detectors: vec![
            DetectorParams {
                efficiency: 1.0,
                dark_rate_hz: 0.0,
                dead_time_ps: 0,
                jitter_sigma_ps: 0.0,
            };
            2
        ],
        settings: vec![StationSetting::dual(Basis::HV); 2],
        duration_s: 10.0,
    };
    let (streams, _) = simulate_detailed(&plan, &states, &cfg, 31).unwrap();

    // Ground truth: serials present on both detectors.
    let serials = |s: &entnet_core::eventsim::TimeTagStream| -> BTreeSet<u32> {
        s.tags()
            .iter()
            .filter_map(|t| match t.origin {
                Origin::Pair { serial, .. } => Some(serial),
                _ => None,
            })
            .collect()
    };
    let truth = serials(&streams[0])
        .intersection(&serials(&streams[1]))
        .count() as u64;

    let matched = count_coincidences(&streams[0], &streams[1], 0, 2).unwrap();
    assert_eq!(matched.count(), truth);
    for &(i, j) in &matched.pairs {
        assert_eq!(streams[0].tags()[i].origin, streams[1].tags()[j].origin);
    }
}

/// Accidental-corrected coincidence counts recover the ground-truth pair
/// count on a noisy link.
#[test]
fn accidental_subtraction_recovers_true_pairs() {
    let plan = two_user_plan();
    let states: BTreeMap<Edge, TwoQubitState> = plan
        .links()
        .iter()
        .map(|l| (l.edge, TwoQubitState::phi_plus()))
        .collect();
    let duration = 60.0;
    let cfg = SimConfig {
        source: SourceParams::cw(10_000.0),
        links: LinkParams::uniform(&plan, 0.4),
        detectors: vec![
            DetectorParams {
                efficiency: 1.0,
                dark_rate_hz: 30_000.0,
                dead_time_ps: 0,
                jitter_sigma_ps: 120.0,
            };
            2
        ],
        settings: vec![StationSetting::dual(Basis::HV); 2],
        duration_s: duration,
    };
    let streams = simulate(&plan, &states, &cfg, 67).unwrap();
    let window = 1_000i64;
    let matched = count_coincidences(&streams[0], &streams[1], 0, window).unwrap();
    let mut truth = 0u64;
    for &(i, j) in &matched.pairs {
        let oa = streams[0].tags()[i].origin;
        if oa == streams[1].tags()[j].origin && oa != Origin::Dark {
            truth += 1;
        }
    }
    let acc_estimate = entnet_core::coincidence::estimate_accidentals(
        streams[0].rate_hz(duration),
        streams[1].rate_hz(duration),
        window as f64 / 1e12,
        duration,
    );
    let corrected = matched.count() as f64 - acc_estimate;
    let sigma = (truth as f64).sqrt().max(1.0);
    assert!(
        (corrected - truth as f64).abs() < 3.0 * sigma,
        "corrected {corrected:.0} vs ground truth {truth} +- {sigma:.0}"
    );
}
