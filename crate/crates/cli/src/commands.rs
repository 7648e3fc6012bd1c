use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use entnet_core::analytic::{curve_csv_header, curve_csv_row, eta_from_loss_db, fidelity_curve};
use entnet_core::coincidence::{
    binary_entropy, campaign_metrics, cross_correlate, metrics_csv_header, metrics_csv_row,
    metrics_json, secure_key_rate_with_efficiency, CampaignRun, CorrelationHistogram,
};
use entnet_core::eventsim::{run_seed, simulate, simulate_pulsed, SourceMode, TimeTagStream};
use entnet_core::tagio;

use crate::config::{basis_of_label, RunConfigFile};
use crate::CliError;

/// Written next to the simulated tag files; records everything analyze
/// needs to re-create the run.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub duration_s: f64,
    pub blind: bool,
    pub users: Vec<String>,
    pub runs: Vec<ManifestRun>,
    /// Verbatim copy of the run configuration, so a run directory is
    /// re-creatable on its own.
    #[serde(default)]
    pub config_toml: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ManifestRun {
    pub index: usize,
    pub settings: Vec<String>,
    /// Tag file per user, in `users` order.
    pub files: Vec<String>,
}

pub fn cmd_plan(cfg: &RunConfigFile, out: &Path) -> Result<(), CliError> {
    let (grid, plan) = cfg.build_plan()?;
    fs::create_dir_all(out)?;
    let json = serde_json::to_string_pretty(&plan.to_json()).expect("plan json");
    fs::write(out.join("plan.json"), json + "\n")?;
    print!("{}", plan.render_table(&grid));
    println!("plan written to {}", out.join("plan.json").display());
    Ok(())
}

pub fn cmd_simulate(
    cfg: &RunConfigFile,
    config_path: &Path,
    seed_override: Option<u64>,
    out: &Path,
    blind: bool,
) -> Result<(), CliError> {
    let (_, plan) = cfg.build_plan()?;
    let states = cfg.states(&plan)?;
    let seed = seed_override
        .or(cfg.run_section()?.seed)
        .ok_or_else(|| CliError::Config("a seed is mandatory for simulate".into()))?;
    let runs = cfg.runs(&plan)?;
    fs::create_dir_all(out)?;
    let config_toml = fs::read_to_string(config_path)?;

    let mut manifest = Manifest {
        seed,
        duration_s: cfg.run_section()?.duration_s,
        blind,
        users: plan.users().to_vec(),
        runs: Vec::new(),
        config_toml,
    };
    for (index, run) in runs.iter().enumerate() {
        let sim = cfg.sim_config(&plan, run.settings.clone())?;
        let streams = match sim.source.mode {
            SourceMode::Cw => simulate(&plan, &states, &sim, run_seed(seed, index as u64))?,
            SourceMode::Pulsed { .. } => {
                let gates = cfg.gate_config(&plan)?.ok_or_else(|| {
                    CliError::Config("pulsed simulation needs a [gates] section".into())
                })?;
                simulate_pulsed(&plan, &states, &sim, &gates, run_seed(seed, index as u64))?.0
            }
        };
        let mut files = Vec::new();
        for (u, stream) in streams.iter().enumerate() {
            let name = format!("run{index:03}_{}.csv", plan.users()[u]);
            let file = fs::File::create(out.join(&name))?;
            let mut w = BufWriter::new(file);
            tagio::write_tags_csv(&mut w, stream.tags(), plan.users(), blind)?;
            w.flush()?;
            files.push(name);
        }
        manifest.runs.push(ManifestRun {
            index,
            settings: run.labels.clone(),
            files,
        });
    }
    let json = serde_json::to_string_pretty(&manifest).expect("manifest json");
    fs::write(out.join("manifest.json"), json + "\n")?;
    println!(
        "simulated {} run(s) x {} user(s) into {}",
        manifest.runs.len(),
        plan.users().len(),
        out.display()
    );
    Ok(())
}

pub fn cmd_analyze(cfg: &RunConfigFile, out: &Path) -> Result<(), CliError> {
    let (_, plan) = cfg.build_plan()?;
    let manifest_path = out.join("manifest.json");
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", manifest_path.display())))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| CliError::Parse(format!("{}: {e}", manifest_path.display())))?;
    if manifest.users != plan.users() {
        return Err(CliError::Config(format!(
            "manifest users {:?} do not match the configured topology {:?}",
            manifest.users,
            plan.users()
        )));
    }

    let mut runs = Vec::new();
    for mrun in &manifest.runs {
        if mrun.files.len() != plan.users().len() {
            return Err(CliError::Parse(format!(
                "run {} lists {} files for {} users",
                mrun.index,
                mrun.files.len(),
                plan.users().len()
            )));
        }
        let mut streams: Vec<TimeTagStream> = Vec::new();
        for (u, file) in mrun.files.iter().enumerate() {
            let path = out.join(file);
            let reader =
                BufReader::new(fs::File::open(&path).map_err(|e| {
                    CliError::Config(format!("cannot open {}: {e}", path.display()))
                })?);
            let mut per_user = tagio::read_tags_csv(reader, plan.users())
                .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
            streams.push(std::mem::take(&mut per_user[u]));
        }
        let settings = mrun
            .settings
            .iter()
            .map(|s| basis_of_label(s))
            .collect::<Result<Vec<_>, _>>()?;
        runs.push(CampaignRun {
            settings,
            duration_s: manifest.duration_s,
            streams,
        });
    }

    let acfg = cfg.analysis();
    let metrics = campaign_metrics(&runs, &plan, &acfg)?;

    // Per-link correlation histograms accumulated over all runs.
    fs::create_dir_all(out)?;
    for link in plan.links() {
        let mut hist: Option<CorrelationHistogram> = None;
        for run in &runs {
            let h = cross_correlate(&run.streams[link.edge.a], &run.streams[link.edge.b], &acfg)?;
            match &mut hist {
                Some(acc) => acc.merge(&h),
                None => hist = Some(h),
            }
        }
        if let Some(h) = hist {
            let name = format!(
                "hist_{}-{}.csv",
                plan.users()[link.edge.a],
                plan.users()[link.edge.b]
            );
            fs::write(out.join(name), h.to_csv())?;
        }
    }

    let json = serde_json::to_string_pretty(&metrics_json(&metrics, &plan)).expect("metrics");
    fs::write(out.join("metrics.json"), json + "\n")?;
    let mut csv = String::from(metrics_csv_header());
    csv.push('\n');
    for m in metrics.values() {
        csv.push_str(&metrics_csv_row(m, &plan));
        csv.push('\n');
    }
    fs::write(out.join("metrics.csv"), csv)?;

    for m in metrics.values() {
        println!(
            "{}-{}: delay {} ps, C {}, V_HV {:.3}, V_DA {:.3}, F {:.3} ({:.3} corrected), \
             QBER {:.4}, raw {:.2} Hz, secure {:.2} Hz{}",
            plan.users()[m.edge.a],
            plan.users()[m.edge.b],
            m.delay_ps,
            m.coincidences,
            m.v_hv,
            m.v_da,
            m.fidelity_raw,
            m.fidelity_corrected,
            m.qber,
            m.raw_key_hz,
            m.secure_key_hz,
            if m.key_capable {
                ""
            } else {
                " [below key threshold]"
            },
        );
    }
    println!("metrics written to {}", out.join("metrics.json").display());
    Ok(())
}

pub fn cmd_curves(cfg: &RunConfigFile, out: &Path) -> Result<(), CliError> {
    let c = &cfg.curves;
    let etas: Vec<f64> = if c.eta_list.is_empty() {
        // Ascending efficiency = descending loss.
        let mut v = Vec::new();
        let mut loss = c.loss_db_max;
        while loss >= -1e-9 {
            v.push(eta_from_loss_db(loss));
            loss -= c.loss_db_step;
        }
        v
    } else {
        c.eta_list.clone()
    };
    fs::create_dir_all(out)?;
    let mut written = 0usize;
    for &n in &c.n_users {
        for &window_ps in &c.window_ps {
            let window_s = window_ps as f64 / 1e12;
            let points = fidelity_curve(n, window_s, c.total_pair_rate_hz, c.dark_rate_hz, &etas)?;
            let mut text = String::from(curve_csv_header());
            text.push('\n');
            for pt in &points {
                text.push_str(&curve_csv_row(n, pt));
                text.push('\n');
            }
            let name = format!("curve_n{n}_tau{window_ps}ps.csv");
            fs::write(out.join(name), text)?;
            written += 1;
        }
    }
    println!("wrote {written} curve file(s) to {}", out.display());
    Ok(())
}

pub struct KeyrateArgs {
    pub raw_hz: f64,
    pub qber: Option<f64>,
    pub fidelity: Option<f64>,
    pub ec_efficiency: f64,
}

pub fn cmd_keyrate(args: &KeyrateArgs) -> Result<(), CliError> {
    let qber = match (args.qber, args.fidelity) {
        (Some(q), None) => q,
        // Isotropic mapping Q = 2(1 - F)/3.
        (None, Some(f)) => 2.0 * (1.0 - f) / 3.0,
        _ => {
            return Err(CliError::Config(
                "keyrate needs exactly one of --qber or --fidelity".into(),
            ))
        }
    };
    if !(0.0..=0.5).contains(&qber) {
        return Err(CliError::Config(format!("QBER {qber} outside [0, 0.5]")));
    }
    if args.raw_hz < 0.0 {
        return Err(CliError::Config(format!(
            "raw rate {} must be non-negative",
            args.raw_hz
        )));
    }
    let secure = secure_key_rate_with_efficiency(args.raw_hz, qber, args.ec_efficiency);
    let fraction = (1.0 - (1.0 + args.ec_efficiency) * binary_entropy(qber)).max(0.0);
    let report = serde_json::json!({
        "raw_hz": args.raw_hz,
        "qber": qber,
        "ec_efficiency": args.ec_efficiency,
        "secure_fraction": fraction,
        "secure_hz": secure,
    });
    println!("{}", serde_json::to_string_pretty(&report).expect("json"));
    Ok(())
}
