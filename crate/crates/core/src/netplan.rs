//! Wavelength-channel planning on the ITU grid.
//!
//! Photon pairs from a CW-pumped down-conversion source are frequency
//! correlated: energy conservation places the two photons of a pair in
//! channels symmetric about the source's center channel. This module computes
//! those conjugate channel pairs and assigns them to the edges of a user
//! topology, producing the per-user multiplex sets that the provider splices
//! into each user's fiber.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Speed of light in nm·THz (c = 299 792 458 m/s).
pub const SPEED_OF_LIGHT_NM_THZ: f64 = 299_792.458;

#[derive(Debug, Error, PartialEq)]
pub enum NetplanError {
    #[error("channel {channel} is non-physical: frequency {frequency_thz} THz <= 0")]
    NonPhysicalChannel { channel: i32, frequency_thz: f64 },
    #[error("channels without a conjugate partner in the set: {0:?}")]
    OrphanChannels(Vec<i32>),
    #[error("channel pair ({signal}, {idler}) is not conjugate: sum {} != {expected}", .signal + .idler)]
    NotConjugate {
        signal: i32,
        idler: i32,
        expected: i32,
    },
    #[error("a network needs at least 2 users, got {0}")]
    TooFewUsers(usize),
    #[error("need {required} pairs, have {available}")]
    InsufficientPairs { required: usize, available: usize },
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
}

/// The 100 GHz ITU frequency grid used to carve the source spectrum into
/// channels, together with the pump that fixes the symmetry point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WavelengthGrid {
    /// Channel spacing in GHz.
    pub channel_spacing_ghz: f64,
    /// Frequency of channel 0 in THz.
    pub base_frequency_thz: f64,
    /// Channel at the center of the down-conversion spectrum; conjugate
    /// channels are mirror images about it.
    pub center_channel: i32,
    /// Pump wavelength in nm (twice the center frequency).
    pub pump_wavelength_nm: f64,
}

impl Default for WavelengthGrid {
    fn default() -> Self {
        Self {
            channel_spacing_ghz: 100.0,
            base_frequency_thz: 190.0,
            center_channel: 34,
            pump_wavelength_nm: 775.075,
        }
    }
}

impl WavelengthGrid {
    /// Frequency of channel `n` in THz, strictly increasing in `n`.
    pub fn frequency_thz(&self, channel: i32) -> f64 {
        self.base_frequency_thz + f64::from(channel) * self.channel_spacing_ghz / 1000.0
    }

    /// The channel on the opposite side of the center channel.
    pub fn conjugate(&self, channel: i32) -> i32 {
        2 * self.center_channel - channel
    }

    /// Sum that every conjugate channel pair must have.
    pub fn pair_sum(&self) -> i32 {
        2 * self.center_channel
    }
}

/// Vacuum wavelength in nm of an ITU channel.
pub fn itu_wavelength(channel: i32, grid: &WavelengthGrid) -> Result<f64, NetplanError> {
    let f = grid.frequency_thz(channel);
    if f <= 0.0 {
        return Err(NetplanError::NonPhysicalChannel {
            channel,
            frequency_thz: f,
        });
    }
    Ok(SPEED_OF_LIGHT_NM_THZ / f)
}

/// Nearest ITU channel for a wavelength; inverse of [`itu_wavelength`].
pub fn channel_of(wavelength_nm: f64, grid: &WavelengthGrid) -> i32 {
    let f = SPEED_OF_LIGHT_NM_THZ / wavelength_nm;
    ((f - grid.base_frequency_thz) / (grid.channel_spacing_ghz / 1000.0)).round() as i32
}

/// A conjugate channel pair carrying one polarization-entangled state.
///
/// `signal` is the lower (red-side) channel by convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChannelPair {
    pub signal: i32,
    pub idler: i32,
}

impl ChannelPair {
    /// Builds a pair after checking conjugacy on the grid.
    pub fn new(a: i32, b: i32, grid: &WavelengthGrid) -> Result<Self, NetplanError> {
        let (signal, idler) = if a <= b { (a, b) } else { (b, a) };
        if signal == idler || signal + idler != grid.pair_sum() {
            return Err(NetplanError::NotConjugate {
                signal,
                idler,
                expected: grid.pair_sum(),
            });
        }
        Ok(Self { signal, idler })
    }
}

impl fmt::Display for ChannelPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.signal, self.idler)
    }
}

/// Groups a channel set into conjugate pairs, ascending by signal channel.
///
/// Every channel must find its partner in the set; leftovers are reported as
/// orphans.
pub fn conjugate_pairs(
    channels: &BTreeSet<i32>,
    grid: &WavelengthGrid,
) -> Result<Vec<ChannelPair>, NetplanError> {
    let mut pairs = Vec::new();
    let mut orphans = Vec::new();
    for &c in channels {
        let partner = grid.conjugate(c);
        if partner == c {
            // The center channel (if usable at all) has no distinct partner.
            orphans.push(c);
        } else if c < partner {
            if channels.contains(&partner) {
                pairs.push(ChannelPair {
                    signal: c,
                    idler: partner,
                });
            } else {
                orphans.push(c);
            }
        } else if !channels.contains(&partner) {
            orphans.push(c);
        }
    }
    if !orphans.is_empty() {
        return Err(NetplanError::OrphanChannels(orphans));
    }
    Ok(pairs)
}

/// Number of wavelength channels a fully connected network of `n_users`
/// needs: one conjugate pair per user pair, N(N-1) channels in total.
pub fn channels_required(n_users: usize) -> Result<usize, NetplanError> {
    if n_users < 2 {
        return Err(NetplanError::TooFewUsers(n_users));
    }
    Ok(n_users * (n_users - 1))
}

/// An unordered user pair, stored with the smaller index first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
}

impl Edge {
    pub fn new(a: usize, b: usize) -> Self {
        if a <= b {
            Self { a, b }
        } else {
            Self { a: b, b: a }
        }
    }

    pub fn touches(&self, user: usize) -> bool {
        self.a == user || self.b == user
    }

    /// The opposite endpoint, if `user` is one of the two.
    pub fn other(&self, user: usize) -> Option<usize> {
        if user == self.a {
            Some(self.b)
        } else if user == self.b {
            Some(self.a)
        } else {
            None
        }
    }
}

/// Requested user topology: named users plus the set of links to serve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    user_names: Vec<String>,
    edges: BTreeSet<Edge>,
}

impl Topology {
    pub fn new<S: Into<String>>(
        user_names: Vec<S>,
        edge_list: &[(usize, usize)],
    ) -> Result<Self, NetplanError> {
        let user_names: Vec<String> = user_names.into_iter().map(Into::into).collect();
        let n = user_names.len();
        if n < 2 {
            return Err(NetplanError::TooFewUsers(n));
        }
        let mut names = BTreeSet::new();
        for name in &user_names {
            if !names.insert(name.clone()) {
                return Err(NetplanError::InvalidTopology(format!(
                    "duplicate user name {name:?}"
                )));
            }
        }
        let mut edges = BTreeSet::new();
        for &(a, b) in edge_list {
            if a == b {
                return Err(NetplanError::InvalidTopology(format!(
                    "self-loop on user index {a}"
                )));
            }
            if a >= n || b >= n {
                return Err(NetplanError::InvalidTopology(format!(
                    "edge ({a}, {b}) references a user index >= {n}"
                )));
            }
            if !edges.insert(Edge::new(a, b)) {
                return Err(NetplanError::InvalidTopology(format!(
                    "duplicate edge ({a}, {b})"
                )));
            }
        }
        Ok(Self { user_names, edges })
    }

    /// Fully connected topology over the given users.
    pub fn full_mesh<S: Into<String>>(user_names: Vec<S>) -> Result<Self, NetplanError> {
        let names: Vec<String> = user_names.into_iter().map(Into::into).collect();
        let n = names.len();
        let mut edge_list = Vec::new();
        for a in 0..n {
            for b in (a + 1)..n {
                edge_list.push((a, b));
            }
        }
        Self::new(names, &edge_list)
    }

    pub fn n_users(&self) -> usize {
        self.user_names.len()
    }

    pub fn user_names(&self) -> &[String] {
        &self.user_names
    }

    pub fn user_index(&self, name: &str) -> Option<usize> {
        self.user_names.iter().position(|u| u == name)
    }

    /// Edges in canonical (lexicographic) order.
    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        self.edges.iter().copied()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }
}

/// One planned link: an edge together with its assigned channel pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannedLink {
    pub edge: Edge,
    pub pair: ChannelPair,
}

/// Assignment of conjugate channel pairs to topology edges plus the derived
/// per-user multiplex sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplexPlan {
    users: Vec<String>,
    links: Vec<PlannedLink>,
    user_mux: Vec<BTreeSet<i32>>,
    unused_pairs: Vec<ChannelPair>,
}

/// Assigns channel pairs to edges in canonical order: edges sorted
/// lexicographically by user indices, pairs ascending by signal channel.
///
/// The signal (lower) channel goes to the lower-indexed endpoint of each
/// edge. Leftover pairs are reported in the plan, not treated as an error.
pub fn allocate(topology: &Topology, pairs: &[ChannelPair]) -> Result<MultiplexPlan, NetplanError> {
    let required = topology.n_edges();
    if pairs.len() < required {
        return Err(NetplanError::InsufficientPairs {
            required,
            available: pairs.len(),
        });
    }
    let mut sorted_pairs = pairs.to_vec();
    sorted_pairs.sort();
    sorted_pairs.dedup();
    if sorted_pairs.len() < required {
        return Err(NetplanError::InsufficientPairs {
            required,
            available: sorted_pairs.len(),
        });
    }

    let mut links = Vec::with_capacity(required);
    let mut user_mux = vec![BTreeSet::new(); topology.n_users()];
    for (edge, pair) in topology.edges().zip(sorted_pairs.iter()) {
        links.push(PlannedLink { edge, pair: *pair });
        user_mux[edge.a].insert(pair.signal);
        user_mux[edge.b].insert(pair.idler);
    }
    let unused_pairs = sorted_pairs.split_off(required);

    Ok(MultiplexPlan {
        users: topology.user_names().to_vec(),
        links,
        user_mux,
        unused_pairs,
    })
}

impl MultiplexPlan {
    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    /// Planned links in canonical edge order.
    pub fn links(&self) -> &[PlannedLink] {
        &self.links
    }

    pub fn unused_pairs(&self) -> &[ChannelPair] {
        &self.unused_pairs
    }

    pub fn user_mux(&self, user: usize) -> &BTreeSet<i32> {
        &self.user_mux[user]
    }

    /// Every channel the plan uses, over all users.
    pub fn channels_in_use(&self) -> BTreeSet<i32> {
        self.user_mux.iter().flatten().copied().collect()
    }

    pub fn link_index(&self, edge: Edge) -> Option<usize> {
        self.links.iter().position(|l| l.edge == edge)
    }

    /// The channel that `user` receives for a given link.
    pub fn channel_for(&self, link: &PlannedLink, user: usize) -> Option<i32> {
        if user == link.edge.a {
            Some(link.pair.signal)
        } else if user == link.edge.b {
            Some(link.pair.idler)
        } else {
            None
        }
    }

    /// JSON document with users, edges, edge -> \[signal, idler\] and
    /// user -> \[channels\].
    pub fn to_json(&self) -> serde_json::Value {
        let edges: Vec<serde_json::Value> = self
            .links
            .iter()
            .map(|l| {
                serde_json::json!({
                    "users": [self.users[l.edge.a], self.users[l.edge.b]],
                    "channels": [l.pair.signal, l.pair.idler],
                })
            })
            .collect();
        let mux: BTreeMap<&str, Vec<i32>> = self
            .users
            .iter()
            .enumerate()
            .map(|(i, name)| (name.as_str(), self.user_mux[i].iter().copied().collect()))
            .collect();
        let unused: Vec<[i32; 2]> = self
            .unused_pairs
            .iter()
            .map(|p| [p.signal, p.idler])
            .collect();
        serde_json::json!({
            "users": self.users,
            "edges": edges,
            "user_mux": mux,
            "unused_pairs": unused,
        })
    }

    /// Human-readable table for terminal output.
    pub fn render_table(&self, grid: &WavelengthGrid) -> String {
        use fmt::Write;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} users, {} links, {} channels in use",
            self.users.len(),
            self.links.len(),
            self.channels_in_use().len()
        );
        let name_w = self
            .links
            .iter()
            .map(|l| self.users[l.edge.a].len() + self.users[l.edge.b].len() + 1)
            .max()
            .unwrap_or(4)
            .max(4);
        let _ = writeln!(
            out,
            "{:name_w$}  {:>6}  {:>6}  {:>12}  {:>12}",
            "link", "signal", "idler", "signal (nm)", "idler (nm)"
        );
        for l in &self.links {
            let link = format!("{}-{}", self.users[l.edge.a], self.users[l.edge.b]);
            let ws = itu_wavelength(l.pair.signal, grid)
                .map(|w| format!("{w:.4}"))
                .unwrap_or_else(|_| "-".into());
            let wi = itu_wavelength(l.pair.idler, grid)
                .map(|w| format!("{w:.4}"))
                .unwrap_or_else(|_| "-".into());
            let _ = writeln!(
                out,
                "{:name_w$}  {:>6}  {:>6}  {:>12}  {:>12}",
                link, l.pair.signal, l.pair.idler, ws, wi
            );
        }
        for (i, name) in self.users.iter().enumerate() {
            let chans: Vec<String> = self.user_mux[i].iter().map(|c| c.to_string()).collect();
            let _ = writeln!(out, "mux {name}: {}", chans.join(" "));
        }
        if !self.unused_pairs.is_empty() {
            let list: Vec<String> = self.unused_pairs.iter().map(|p| p.to_string()).collect();
            let _ = writeln!(out, "unused pairs: {}", list.join(" "));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> WavelengthGrid {
        WavelengthGrid::default()
    }

    /// Measured channel wavelengths of the reference network (nm).
    const REFERENCE_WAVELENGTHS: [(i32, f64); 12] = [
        (27, 1555.75),
        (41, 1544.53),
        (28, 1554.94),
        (40, 1545.32),
        (29, 1554.13),
        (39, 1546.12),
        (30, 1553.33),
        (38, 1546.92),
        (31, 1552.52),
        (37, 1547.72),
        (32, 1551.72),
        (36, 1548.52),
    ];

    #[test]
    fn itu_wavelength_matches_reference_table() {
        for &(ch, nm) in &REFERENCE_WAVELENGTHS {
            let w = itu_wavelength(ch, &grid()).unwrap();
            assert!(
                (w - nm).abs() < 0.01,
                "channel {ch}: got {w}, expected {nm}"
            );
        }
    }

    #[test]
    fn itu_wavelength_center_channel() {
        // f = 190.0 + 3.4 THz, lambda = c/f evaluated by hand.
        let w = itu_wavelength(34, &grid()).unwrap();
        assert!((w - 1550.12).abs() < 0.005, "got {w}");
    }

    #[test]
    fn itu_wavelength_round_trips() {
        for ch in -100..200 {
            let w = itu_wavelength(ch, &grid()).unwrap();
            assert_eq!(channel_of(w, &grid()), ch);
        }
    }

    #[test]
    fn itu_wavelength_rejects_non_physical_channel() {
        // 190 THz / 0.1 THz per channel: channel -1900 sits at 0 THz.
        let err = itu_wavelength(-1900, &grid()).unwrap_err();
        assert!(matches!(err, NetplanError::NonPhysicalChannel { .. }));
        assert!(itu_wavelength(-1901, &grid()).is_err());
    }

    #[test]
    fn conjugate_pairs_reference_channels() {
        let channels: BTreeSet<i32> = (27..=32).chain(36..=41).collect();
        let pairs = conjugate_pairs(&channels, &grid()).unwrap();
        let expected: Vec<(i32, i32)> =
            vec![(27, 41), (28, 40), (29, 39), (30, 38), (31, 37), (32, 36)];
        let got: Vec<(i32, i32)> = pairs.iter().map(|p| (p.signal, p.idler)).collect();
        assert_eq!(got, expected);
        for p in &pairs {
            assert_eq!(p.signal + p.idler, 68);
        }
    }

    #[test]
    fn conjugate_pairs_symmetric_about_center() {
        let channels: BTreeSet<i32> = [33, 35].into_iter().collect();
        let pairs = conjugate_pairs(&channels, &grid()).unwrap();
        assert_eq!(
            pairs,
            vec![ChannelPair {
                signal: 33,
                idler: 35
            }]
        );
    }

    #[test]
    fn conjugate_pairs_reports_orphans() {
        let channels: BTreeSet<i32> = [27, 40].into_iter().collect();
        let err = conjugate_pairs(&channels, &grid()).unwrap_err();
        assert_eq!(err, NetplanError::OrphanChannels(vec![27, 40]));
    }

    #[test]
    fn channel_pair_rejects_non_conjugate() {
        assert!(ChannelPair::new(27, 41, &grid()).is_ok());
        // Normalizes the order.
        let p = ChannelPair::new(41, 27, &grid()).unwrap();
        assert_eq!((p.signal, p.idler), (27, 41));
        assert!(matches!(
            ChannelPair::new(27, 40, &grid()),
            Err(NetplanError::NotConjugate { .. })
        ));
        assert!(ChannelPair::new(34, 34, &grid()).is_err());
    }

    #[test]
    fn center_channel_is_its_own_conjugate() {
        let channels: BTreeSet<i32> = [33, 34, 35].into_iter().collect();
        let err = conjugate_pairs(&channels, &grid()).unwrap_err();
        assert_eq!(err, NetplanError::OrphanChannels(vec![34]));
    }

    #[test]
    fn channels_required_examples() {
        assert_eq!(channels_required(4).unwrap(), 12);
        assert_eq!(channels_required(2).unwrap(), 2);
        assert_eq!(channels_required(7).unwrap(), 42);
        assert!(matches!(
            channels_required(1),
            Err(NetplanError::TooFewUsers(1))
        ));
    }

    fn reference_pairs() -> Vec<ChannelPair> {
        let channels: BTreeSet<i32> = (27..=32).chain(36..=41).collect();
        conjugate_pairs(&channels, &grid()).unwrap()
    }

    #[test]
    fn allocate_four_user_full_mesh_is_canonical() {
        let topo = Topology::full_mesh(vec!["A", "B", "C", "D"]).unwrap();
        let plan = allocate(&topo, &reference_pairs()).unwrap();
        let expected = [
            ((0, 1), (27, 41)),
            ((0, 2), (28, 40)),
            ((0, 3), (29, 39)),
            ((1, 2), (30, 38)),
            ((1, 3), (31, 37)),
            ((2, 3), (32, 36)),
        ];
        assert_eq!(plan.links().len(), 6);
        for (link, &((a, b), (s, i))) in plan.links().iter().zip(&expected) {
            assert_eq!((link.edge.a, link.edge.b), (a, b));
            assert_eq!((link.pair.signal, link.pair.idler), (s, i));
        }
        for u in 0..4 {
            assert_eq!(plan.user_mux(u).len(), 3);
        }
        assert_eq!(plan.channels_in_use().len(), 12);
        assert!(plan.unused_pairs().is_empty());
    }

    #[test]
    fn allocate_two_users() {
        let topo = Topology::full_mesh(vec!["A", "B"]).unwrap();
        let pair = ChannelPair::new(33, 35, &grid()).unwrap();
        let plan = allocate(&topo, &[pair]).unwrap();
        assert_eq!(plan.user_mux(0).len(), 1);
        assert_eq!(plan.user_mux(1).len(), 1);
        assert!(plan.user_mux(0).contains(&33));
        assert!(plan.user_mux(1).contains(&35));
    }

    #[test]
    fn allocate_insufficient_pairs() {
        let topo = Topology::full_mesh(vec!["A", "B", "C", "D", "E"]).unwrap();
        let err = allocate(&topo, &reference_pairs()).unwrap_err();
        assert_eq!(
            err,
            NetplanError::InsufficientPairs {
                required: 10,
                available: 6
            }
        );
        assert_eq!(err.to_string(), "need 10 pairs, have 6");
    }

    #[test]
    fn allocate_partial_topology_reports_unused_pairs() {
        let topo = Topology::new(vec!["A", "B", "C"], &[(0, 1), (1, 2)]).unwrap();
        let plan = allocate(&topo, &reference_pairs()).unwrap();
        assert_eq!(plan.links().len(), 2);
        assert_eq!(plan.unused_pairs().len(), 4);
    }

    #[test]
    fn topology_rejects_self_loops_duplicates_and_bad_indices() {
        assert!(Topology::new(vec!["A", "B"], &[(0, 0)]).is_err());
        assert!(Topology::new(vec!["A", "B"], &[(0, 1), (1, 0)]).is_err());
        assert!(Topology::new(vec!["A", "B"], &[(0, 2)]).is_err());
        assert!(Topology::new(vec!["A", "A"], &[(0, 1)]).is_err());
        assert!(Topology::new::<&str>(vec!["A"], &[]).is_err());
    }

    /// Re-derives every plan invariant from scratch, independent of the
    /// allocation path.
    fn check_plan_validity(plan: &MultiplexPlan, topo: &Topology, grid: &WavelengthGrid) {
        // Every topology edge covered exactly once, in canonical order.
        let edges: Vec<Edge> = topo.edges().collect();
        assert_eq!(plan.links().len(), edges.len());
        for (link, edge) in plan.links().iter().zip(edges) {
            assert_eq!(link.edge, edge);
        }
        // Each channel pair used at most once and conjugate on the grid.
        let mut seen_pairs = BTreeSet::new();
        let mut seen_channels = BTreeSet::new();
        for link in plan.links() {
            assert!(seen_pairs.insert(link.pair), "pair reused: {}", link.pair);
            assert_eq!(link.pair.signal + link.pair.idler, grid.pair_sum());
            assert!(seen_channels.insert(link.pair.signal));
            assert!(seen_channels.insert(link.pair.idler));
        }
        // The two channels of each edge land in exactly the two endpoint mux
        // sets, one channel each.
        for link in plan.links() {
            let s_in_a = plan.user_mux(link.edge.a).contains(&link.pair.signal);
            let s_in_b = plan.user_mux(link.edge.b).contains(&link.pair.signal);
            let i_in_a = plan.user_mux(link.edge.a).contains(&link.pair.idler);
            let i_in_b = plan.user_mux(link.edge.b).contains(&link.pair.idler);
            assert!(
                s_in_a ^ s_in_b,
                "signal channel not in exactly one endpoint"
            );
            assert!(i_in_a ^ i_in_b, "idler channel not in exactly one endpoint");
            assert!(s_in_a != i_in_a, "one endpoint got both channels");
            for u in 0..plan.n_users() {
                if !link.edge.touches(u) {
                    assert!(!plan.user_mux(u).contains(&link.pair.signal));
                    assert!(!plan.user_mux(u).contains(&link.pair.idler));
                }
            }
        }
        // Mux sets contain nothing else.
        let total: usize = (0..plan.n_users()).map(|u| plan.user_mux(u).len()).sum();
        assert_eq!(total, 2 * plan.links().len());
    }

    #[test]
    fn full_mesh_plans_valid_for_2_to_8_users() {
        let g = grid();
        for n in 2..=8usize {
            let names: Vec<String> = (0..n).map(|i| format!("U{i}")).collect();
            let topo = Topology::full_mesh(names).unwrap();
            let n_pairs = topo.n_edges();
            // Channels fanning out from the center channel.
            let channels: BTreeSet<i32> = (1..=n_pairs as i32)
                .flat_map(|k| [34 - k, 34 + k])
                .collect();
            let pairs = conjugate_pairs(&channels, &g).unwrap();
            let plan = allocate(&topo, &pairs).unwrap();
            check_plan_validity(&plan, &topo, &g);
            for u in 0..n {
                assert_eq!(plan.user_mux(u).len(), n - 1, "N={n} user {u}");
            }
            assert_eq!(plan.channels_in_use().len(), n * (n - 1));
        }
    }

    #[test]
    fn plan_json_shape() {
        let topo = Topology::full_mesh(vec!["Alice", "Bob"]).unwrap();
        let pairs = reference_pairs();
        let plan = allocate(&topo, &pairs).unwrap();
        let json = plan.to_json();
        assert_eq!(json["users"][0], "Alice");
        assert_eq!(json["edges"][0]["channels"][0], 27);
        assert_eq!(json["user_mux"]["Alice"][0], 27);
        assert_eq!(json["user_mux"]["Bob"][0], 41);
        assert_eq!(json["unused_pairs"].as_array().unwrap().len(), 5);
    }

    #[test]
    fn render_table_mentions_links_and_mux() {
        let topo = Topology::full_mesh(vec!["Alice", "Bob"]).unwrap();
        let plan = allocate(&topo, &reference_pairs()).unwrap();
        let table = plan.render_table(&grid());
        assert!(table.contains("Alice-Bob"));
        assert!(table.contains("mux Alice: 27"));
        assert!(table.contains("1555.7"));
    }
}
