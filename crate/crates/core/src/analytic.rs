//! Closed-form network scaling model.
//!
//! Per-detector singles, per-link true-coincidence and accidental rates as a
//! function of user count, source brightness, system efficiency, dark rate
//! and coincidence window, plus the planning queries built on top of them
//! (fidelity-vs-loss curves, maximum user counts within a loss budget,
//! detector-splitting gains, duty-cycle gating factors). The Monte Carlo
//! simulator cross-validates these formulas; see the acceptance suite.

use serde::Serialize;
use thiserror::Error;

use crate::coincidence::secure_key_rate;

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticError {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("detector count {m} outside 1..={max} for {n} users")]
    DetectorsOutOfRange { m: usize, max: usize, n: usize },
}

/// Inputs of the scaling model.
///
/// `total_pair_rate_hz` is the source brightness `P`; each of the
/// `N(N-1)/2` links of a fully meshed network receives generated pairs at
/// `P/2`. `system_efficiency` is the full per-photon detection probability
/// (fiber, filters and detector), applied identically to both arms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingParams {
    pub n_users: usize,
    pub total_pair_rate_hz: f64,
    pub system_efficiency: f64,
    pub dark_rate_hz: f64,
    pub window_s: f64,
    /// Detectors per user; the N-1 incoming channels split evenly across
    /// them. One detector per user unless stated otherwise.
    pub detectors_per_user: usize,
}

impl ScalingParams {
    pub fn new(
        n_users: usize,
        total_pair_rate_hz: f64,
        system_efficiency: f64,
        dark_rate_hz: f64,
        window_s: f64,
    ) -> Result<Self, AnalyticError> {
        let p = Self {
            n_users,
            total_pair_rate_hz,
            system_efficiency,
            dark_rate_hz,
            window_s,
            detectors_per_user: 1,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_detectors_per_user(mut self, m: usize) -> Result<Self, AnalyticError> {
        self.detectors_per_user = m;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<(), AnalyticError> {
        if self.n_users < 2 {
            return Err(AnalyticError::InvalidParam(format!(
                "need at least 2 users, got {}",
                self.n_users
            )));
        }
        if !(0.0..=1.0).contains(&self.system_efficiency) {
            return Err(AnalyticError::InvalidParam(format!(
                "system efficiency {} outside [0, 1]",
                self.system_efficiency
            )));
        }
        if self.total_pair_rate_hz < 0.0 || self.dark_rate_hz < 0.0 || self.window_s < 0.0 {
            return Err(AnalyticError::InvalidParam(
                "rates and window must be non-negative".into(),
            ));
        }
        let max = (self.n_users - 1).max(1);
        if self.detectors_per_user < 1 || self.detectors_per_user > max {
            return Err(AnalyticError::DetectorsOutOfRange {
                m: self.detectors_per_user,
                max,
                n: self.n_users,
            });
        }
        Ok(())
    }

    /// Channel load per detector, `(N-1)/m`; fractional loads are allowed
    /// in the model.
    pub fn channels_per_detector(&self) -> f64 {
        (self.n_users as f64 - 1.0) / self.detectors_per_user as f64
    }

    /// Generated pair rate per link, `P/2`.
    pub fn pair_rate_per_link_hz(&self) -> f64 {
        self.total_pair_rate_hz / 2.0
    }
}

/// Per-detector singles rate
/// `S_i = D + l*(P/2)*eta - (l-1)*(P/2)*eta^2`
/// with `l` channels per detector: dark counts plus one photon per incident
/// channel, minus the photons already accounted to identified coincidences
/// of the other `l-1` channels.
pub fn singles_rate(p: &ScalingParams) -> f64 {
    let load = p.channels_per_detector();
    let half_rate = p.pair_rate_per_link_hz();
    let eta = p.system_efficiency;
    p.dark_rate_hz + load * half_rate * eta - (load - 1.0) * half_rate * eta * eta
}

/// Per-link coincidence budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinkRates {
    /// True coincidences `(P/2) eta^2`.
    pub c_true_hz: f64,
    /// Accidentals `tau * S_i^2`.
    pub acc_hz: f64,
    /// Total observed coincidences `C = C_true + Acc`.
    pub coincidence_hz: f64,
}

pub fn link_rates(p: &ScalingParams) -> LinkRates {
    let eta = p.system_efficiency;
    let c_true_hz = p.pair_rate_per_link_hz() * eta * eta;
    let s = singles_rate(p);
    let acc_hz = p.window_s * s * s;
    LinkRates {
        c_true_hz,
        acc_hz,
        coincidence_hz: c_true_hz + acc_hz,
    }
}

/// Accidentals are polarization-uncorrelated, so half of them land in the
/// error cells: `QBER = (Acc/2) / (C_true + Acc)`.
pub fn qber(p: &ScalingParams) -> f64 {
    let r = link_rates(p);
    if r.coincidence_hz <= 0.0 {
        return 0.0;
    }
    (r.acc_hz / 2.0) / r.coincidence_hz
}

/// Isotropic-noise mapping from QBER to Bell-state fidelity,
/// `F = 1 - (3/2) Q`.
pub fn fidelity_from_qber(q: f64) -> f64 {
    1.0 - 1.5 * q
}

pub fn fidelity(p: &ScalingParams) -> f64 {
    fidelity_from_qber(qber(p))
}

pub fn eta_from_loss_db(loss_db: f64) -> f64 {
    10f64.powf(-loss_db / 10.0)
}

pub fn loss_db_from_eta(eta: f64) -> f64 {
    -10.0 * eta.log10()
}

/// One sample of a fidelity/QBER-vs-efficiency curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub eta: f64,
    pub loss_db: f64,
    pub singles_hz: f64,
    pub c_true_hz: f64,
    pub acc_hz: f64,
    pub coincidence_hz: f64,
    pub qber: f64,
    pub fidelity: f64,
}

/// Evaluates the scaling model over an ascending efficiency grid.
pub fn fidelity_curve(
    n_users: usize,
    window_s: f64,
    total_pair_rate_hz: f64,
    dark_rate_hz: f64,
    eta_grid: &[f64],
) -> Result<Vec<CurvePoint>, AnalyticError> {
    let mut points = Vec::with_capacity(eta_grid.len());
    for &eta in eta_grid {
        let p = ScalingParams::new(n_users, total_pair_rate_hz, eta, dark_rate_hz, window_s)?;
        points.push(curve_point(&p));
    }
    Ok(points)
}

fn curve_point(p: &ScalingParams) -> CurvePoint {
    let r = link_rates(p);
    let q = qber(p);
    CurvePoint {
        eta: p.system_efficiency,
        loss_db: loss_db_from_eta(p.system_efficiency),
        singles_hz: singles_rate(p),
        c_true_hz: r.c_true_hz,
        acc_hz: r.acc_hz,
        coincidence_hz: r.coincidence_hz,
        qber: q,
        fidelity: fidelity_from_qber(q),
    }
}

/// CSV header matching [`curve_csv_row`].
pub fn curve_csv_header() -> &'static str {
    "n,eta,loss_db,singles_hz,ctrue_hz,acc_hz,qber,fidelity"
}

pub fn curve_csv_row(n_users: usize, pt: &CurvePoint) -> String {
    format!(
        "{},{:.6e},{:.3},{:.6e},{:.6e},{:.6e},{:.6e},{:.6}",
        n_users, pt.eta, pt.loss_db, pt.singles_hz, pt.c_true_hz, pt.acc_hz, pt.qber, pt.fidelity
    )
}

const MAX_USERS_SEARCH_CAP: usize = 100_000;

/// Largest user count whose link fidelity stays at or above `f_min` at the
/// given loss; 0 if even two users fail.
pub fn max_users_at_loss(
    loss_db: f64,
    window_s: f64,
    total_pair_rate_hz: f64,
    dark_rate_hz: f64,
    f_min: f64,
) -> Result<usize, AnalyticError> {
    if loss_db < 0.0 {
        return Err(AnalyticError::InvalidParam(format!(
            "loss {loss_db} dB < 0"
        )));
    }
    let eta = eta_from_loss_db(loss_db);
    let mut best = 0usize;
    for n in 2..=MAX_USERS_SEARCH_CAP {
        let p = ScalingParams::new(n, total_pair_rate_hz, eta, dark_rate_hz, window_s)?;
        if fidelity(&p) >= f_min {
            best = n;
        } else {
            break;
        }
    }
    Ok(best)
}

/// Loss at which the fidelity of an `n_users` network crosses `f_min`;
/// `None` when it is already below the threshold at zero loss.
pub fn crossing_loss_db(
    n_users: usize,
    window_s: f64,
    total_pair_rate_hz: f64,
    dark_rate_hz: f64,
    f_min: f64,
) -> Result<Option<f64>, AnalyticError> {
    let fidelity_at = |loss_db: f64| -> Result<f64, AnalyticError> {
        let p = ScalingParams::new(
            n_users,
            total_pair_rate_hz,
            eta_from_loss_db(loss_db),
            dark_rate_hz,
            window_s,
        )?;
        Ok(fidelity(&p))
    };
    let (mut lo, mut hi) = (0.0f64, 200.0f64);
    if fidelity_at(lo)? < f_min {
        return Ok(None);
    }
    if fidelity_at(hi)? >= f_min {
        return Ok(Some(hi));
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if fidelity_at(mid)? >= f_min {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(0.5 * (lo + hi)))
}

/// Effect of de-multiplexing each user's channels onto `m` detectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SplitGain {
    /// Summed secure key rate across a user's links, relative to `m = 1`.
    pub total_key_rate_ratio: f64,
    /// Per-link QBER with the split detectors.
    pub qber: f64,
}

/// Splitting the `N-1` channels over `m` detectors lowers each detector's
/// singles rate and with it the accidental floor; every link keeps its true
/// coincidence rate, so the summed secure rate grows.
pub fn detector_split_gain(p: &ScalingParams, m: usize) -> Result<SplitGain, AnalyticError> {
    let split = p.with_detectors_per_user(m)?;
    let baseline = p.with_detectors_per_user(1)?;
    let rate_of = |params: &ScalingParams| {
        let r = link_rates(params);
        secure_key_rate(r.coincidence_hz, qber(params))
    };
    let secure_split = rate_of(&split);
    let secure_base = rate_of(&baseline);
    let total_key_rate_ratio = if secure_base > 0.0 {
        secure_split / secure_base
    } else if secure_split > 0.0 {
        f64::INFINITY
    } else {
        1.0
    };
    Ok(SplitGain {
        total_key_rate_ratio,
        qber: qber(&split),
    })
}

/// Fraction of accidentals surviving pulsed gating: the duty cycle
/// `(gates per pulse * gate width) / period`.
pub fn pulsed_accidental_factor(
    gates_per_pulse: usize,
    gate_width_s: f64,
    period_s: f64,
) -> Result<f64, AnalyticError> {
    if gates_per_pulse == 0 || gate_width_s <= 0.0 || period_s <= 0.0 {
        return Err(AnalyticError::InvalidParam(
            "gating needs at least one gate of positive width in a positive period".into(),
        ));
    }
    let duty = gates_per_pulse as f64 * gate_width_s / period_s;
    if duty > 1.0 {
        return Err(AnalyticError::InvalidParam(format!(
            "duty cycle {duty} exceeds 1"
        )));
    }
    Ok(duty)
}
