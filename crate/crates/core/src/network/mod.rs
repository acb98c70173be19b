//! Road network, OD structure and candidate path sets.

mod io;
mod paths;

pub use io::{load_network, load_node_coords, write_network, write_node_coords, write_od_pairs};
pub use paths::{
    enumerate_paths, load_path_file, write_path_file, ClassPaths, Path, PathSet,
};

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::{Error, Result, VehicleClass, NUM_CLASSES};

pub type NodeId = u32;
pub type LinkId = u32;

/// Planar point in meters.
pub type Point = [f64; 2];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub id: LinkId,
    pub from: NodeId,
    pub to: NodeId,
    pub length_km: f64,
    /// Free-flow speed per class, km/h.
    pub free_flow_speed: [f64; NUM_CLASSES],
    /// Discharge capacity per class, veh/h.
    pub capacity: [f64; NUM_CLASSES],
    /// Jam density per class, veh/km.
    pub jam_density: [f64; NUM_CLASSES],
    pub allows_parking: bool,
    /// Curb storage in vehicles; zero when parking is not allowed.
    pub curb_capacity: f64,
    pub is_connector: bool,
}

impl Link {
    /// Free-flow traversal time in seconds.
    pub fn free_flow_time(&self, class: VehicleClass) -> f64 {
        self.length_km / self.free_flow_speed[class.index()] * 3600.0
    }

    /// Upper bound on vehicles that can be present on the link at once.
    pub fn storage(&self, class: VehicleClass) -> f64 {
        self.jam_density[class.index()] * self.length_km + self.curb_capacity
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OdPair {
    pub origin: NodeId,
    pub destination: NodeId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ViolationKind {
    Topology,
    Invariant,
}

/// A single problem found by [`validate_network`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub link: Option<LinkId>,
    pub kind: ViolationKind,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.link {
            Some(id) => write!(f, "link {id}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Directed road network with OD pairs. Links are addressed internally by
/// their position in `links`; external ids only appear at I/O boundaries.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    nodes: BTreeSet<NodeId>,
    links: Vec<Link>,
    link_index: HashMap<LinkId, usize>,
    origins: Vec<NodeId>,
    destinations: Vec<NodeId>,
    od_pairs: Vec<OdPair>,
    coords: BTreeMap<NodeId, Point>,
    geometry: BTreeMap<usize, Vec<Point>>,
}

impl Network {
    /// Builds a network and rejects it if any invariant is violated.
    pub fn new(links: Vec<Link>, od_pairs: Vec<OdPair>) -> Result<Self> {
        let net = Self::unchecked(links, od_pairs);
        let report = validate_network(&net);
        if let Some(first) = report.first() {
            return Err(match first.kind {
                ViolationKind::Topology => Error::Topology(first.to_string()),
                ViolationKind::Invariant => Error::Invariant(first.to_string()),
            });
        }
        Ok(net)
    }

    /// Builds a network without validation. Use [`validate_network`] to
    /// inspect it.
    pub fn unchecked(links: Vec<Link>, od_pairs: Vec<OdPair>) -> Self {
        let mut nodes = BTreeSet::new();
        let mut link_index = HashMap::with_capacity(links.len());
        for (i, l) in links.iter().enumerate() {
            nodes.insert(l.from);
            nodes.insert(l.to);
            link_index.entry(l.id).or_insert(i);
        }
        let mut origins: Vec<NodeId> = od_pairs.iter().map(|od| od.origin).collect();
        origins.sort_unstable();
        origins.dedup();
        let mut destinations: Vec<NodeId> = od_pairs.iter().map(|od| od.destination).collect();
        destinations.sort_unstable();
        destinations.dedup();
        Network {
            nodes,
            links,
            link_index,
            origins,
            destinations,
            od_pairs,
            coords: BTreeMap::new(),
            geometry: BTreeMap::new(),
        }
    }

    pub fn nodes(&self) -> &BTreeSet<NodeId> {
        &self.nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, idx: usize) -> &Link {
        &self.links[idx]
    }

    pub fn num_links(&self) -> usize {
        self.links.len()
    }

    pub fn link_idx(&self, id: LinkId) -> Option<usize> {
        self.link_index.get(&id).copied()
    }

    pub fn origins(&self) -> &[NodeId] {
        &self.origins
    }

    pub fn destinations(&self) -> &[NodeId] {
        &self.destinations
    }

    pub fn od_pairs(&self) -> &[OdPair] {
        &self.od_pairs
    }

    pub fn num_od(&self) -> usize {
        self.od_pairs.len()
    }

    /// Indices of links that are road segments (not OD connectors).
    pub fn segment_indices(&self) -> Vec<usize> {
        (0..self.links.len())
            .filter(|&i| !self.links[i].is_connector)
            .collect()
    }

    /// Outgoing link indices per node, sorted by link id.
    pub fn adjacency(&self) -> BTreeMap<NodeId, Vec<usize>> {
        let mut adj: BTreeMap<NodeId, Vec<usize>> = BTreeMap::new();
        for (i, l) in self.links.iter().enumerate() {
            adj.entry(l.from).or_default().push(i);
        }
        for v in adj.values_mut() {
            v.sort_by_key(|&i| self.links[i].id);
        }
        adj
    }

    pub fn coords(&self) -> &BTreeMap<NodeId, Point> {
        &self.coords
    }

    pub fn set_coords(&mut self, coords: BTreeMap<NodeId, Point>) {
        self.coords = coords;
    }

    /// Replaces the straight node-to-node geometry of a link by a polyline.
    pub fn set_link_geometry(&mut self, link_idx: usize, polyline: Vec<Point>) -> Result<()> {
        if link_idx >= self.links.len() {
            return Err(Error::InvalidInput(format!("link index {link_idx} out of range")));
        }
        if polyline.len() < 2 || polyline.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "polyline needs at least two finite points".into(),
            ));
        }
        self.geometry.insert(link_idx, polyline);
        Ok(())
    }

    /// Centerline of a link, from the explicit polyline if one was set and
    /// from node coordinates otherwise.
    pub fn link_polyline(&self, link_idx: usize) -> Result<Vec<Point>> {
        if let Some(p) = self.geometry.get(&link_idx) {
            return Ok(p.clone());
        }
        let l = &self.links[link_idx];
        let a = self.coords.get(&l.from).ok_or_else(|| {
            Error::InvalidInput(format!("missing coordinates for node {}", l.from))
        })?;
        let b = self.coords.get(&l.to).ok_or_else(|| {
            Error::InvalidInput(format!("missing coordinates for node {}", l.to))
        })?;
        Ok(vec![*a, *b])
    }
}

/// Collects every invariant violation of `net`. Empty means valid.
pub fn validate_network(net: &Network) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen = HashMap::new();
    for l in &net.links {
        let mut bad = |msg: String| {
            out.push(Violation {
                link: Some(l.id),
                kind: ViolationKind::Invariant,
                message: msg,
            })
        };
        if *seen.entry(l.id).and_modify(|c| *c += 1).or_insert(1) == 2 {
            bad("duplicated link id".into());
        }
        if !(l.length_km > 0.0 && l.length_km.is_finite()) {
            bad(format!("length must be positive, got {}", l.length_km));
        }
        for c in VehicleClass::ALL {
            let i = c.index();
            if !(l.free_flow_speed[i] > 0.0 && l.free_flow_speed[i].is_finite()) {
                bad(format!("{c} free-flow speed must be positive"));
            }
            if !(l.capacity[i] > 0.0 && l.capacity[i].is_finite()) {
                bad(format!("{c} capacity must be positive"));
            }
            if !(l.jam_density[i] > 0.0 && l.jam_density[i].is_finite()) {
                bad(format!("{c} jam density must be positive"));
            }
        }
        if !(l.curb_capacity >= 0.0 && l.curb_capacity.is_finite()) {
            bad("curb capacity must be non-negative".into());
        }
        if l.curb_capacity > 0.0 && !l.allows_parking {
            bad("curb capacity set on a link that does not allow parking".into());
        }
        if l.from == l.to {
            bad("self loop".into());
        }
    }
    for od in &net.od_pairs {
        for (role, node) in [("origin", od.origin), ("destination", od.destination)] {
            if !net.nodes.contains(&node) {
                out.push(Violation {
                    link: None,
                    kind: ViolationKind::Topology,
                    message: format!("OD {role} {node} is not an endpoint of any link"),
                });
            }
        }
        if od.origin == od.destination {
            out.push(Violation {
                link: None,
                kind: ViolationKind::Invariant,
                message: format!("OD pair {0} -> {0} has identical endpoints", od.origin),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::toy_network;

    #[test]
    fn toy_network_is_valid() {
        let net = toy_network();
        assert_eq!(net.num_links(), 18);
        assert_eq!(net.segment_indices().len(), 12);
        assert!(validate_network(&net).is_empty());
    }

    #[test]
    fn curb_without_parking_is_reported_once() {
        let mut links = toy_network().links().to_vec();
        links[0].allows_parking = false;
        links[0].curb_capacity = 5.0;
        let net = Network::unchecked(links, toy_network().od_pairs().to_vec());
        let report = validate_network(&net);
        assert_eq!(report.len(), 1, "{report:?}");
        assert!(report[0].message.contains("curb"));
    }

    #[test]
    fn duplicated_link_id_is_reported_once() {
        let mut links = toy_network().links().to_vec();
        let mut dup = links[3].clone();
        dup.from = 900;
        dup.to = 901;
        links.push(dup);
        let net = Network::unchecked(links, toy_network().od_pairs().to_vec());
        let report = validate_network(&net);
        assert_eq!(report.len(), 1, "{report:?}");
        assert!(report[0].message.contains("duplicated"));
    }

    #[test]
    fn zero_length_rejected() {
        let mut links = toy_network().links().to_vec();
        links[2].length_km = 0.0;
        let err = Network::new(links, toy_network().od_pairs().to_vec()).unwrap_err();
        assert!(matches!(err, Error::Invariant(_)), "{err}");
    }

    #[test]
    fn free_flow_time_of_row_one() {
        let net = toy_network();
        let l = net.link(net.link_idx(1).unwrap());
        assert!((l.free_flow_time(VehicleClass::Car) - 72.0).abs() < 1e-12);
        assert!((l.free_flow_time(VehicleClass::Truck) - 90.0).abs() < 1e-12);
    }
}
