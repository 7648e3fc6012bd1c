//! Core library for planning, simulating and analyzing fully connected
//! entanglement-distribution networks over dense wavelength-division
//! multiplexing.
//!
//! A single photon-pair source feeds `N` users through `N(N-1)` wavelength
//! channels; every pair of users shares one polarization-entangled link on a
//! conjugate channel pair. The crate covers the full chain:
//!
//! - [`netplan`] — ITU grid arithmetic, conjugate channel pairing and
//!   assignment of channel pairs to the edges of a user topology.
//! - [`quantum`] — two-qubit polarization states and measurement statistics.
//! - [`eventsim`] — Monte Carlo generation of per-detector time-tag streams
//!   (CW and pulsed pump, detector noise, dead time).
//! - [`coincidence`] — cross-correlation, coincidence counting, visibility,
//!   fidelity, QBER and key rates from time-tag streams.
//! - [`analytic`] — closed-form singles/coincidence/accidental model and
//!   network scaling queries, cross-validated against the simulator.
//! - [`tagio`] — the time-tag CSV interchange format.
//! - [`refnet`] — a bundled four-user reference network with measured count
//!   targets and the rate calibration that reproduces them.

pub mod analytic;
pub mod coincidence;
pub mod eventsim;
pub mod netplan;
pub mod quantum;
pub mod refnet;
pub mod tagio;
