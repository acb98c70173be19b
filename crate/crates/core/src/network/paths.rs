use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path as FsPath;

use log::warn;

use super::{LinkId, Network, NodeId};
use crate::{Error, Result, VehicleClass, NUM_CLASSES};

const COST_EPS: f64 = 1e-9;

/// A loopless route through the network for one OD pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    pub od: usize,
    /// Link indices in traversal order.
    pub links: Vec<usize>,
    /// Free-flow time per class, seconds.
    pub free_flow_time: [f64; NUM_CLASSES],
    /// Last road segment on the path that allows curb parking.
    pub parking_link: Option<usize>,
}

impl Path {
    fn new(net: &Network, od: usize, links: Vec<usize>) -> Self {
        let mut free_flow_time = [0.0; NUM_CLASSES];
        for c in VehicleClass::ALL {
            free_flow_time[c.index()] = links.iter().map(|&l| net.link(l).free_flow_time(c)).sum();
        }
        let parking_link = links
            .iter()
            .rev()
            .copied()
            .find(|&l| !net.link(l).is_connector && net.link(l).allows_parking);
        Path {
            od,
            links,
            free_flow_time,
            parking_link,
        }
    }

    pub fn link_ids(&self, net: &Network) -> Vec<LinkId> {
        self.links.iter().map(|&l| net.link(l).id).collect()
    }
}

/// Candidate paths of one vehicle class.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClassPaths {
    pub paths: Vec<Path>,
    /// Path indices per OD pair, sorted ascending by free-flow cost.
    pub by_od: Vec<Vec<usize>>,
    /// OD indices without any path.
    pub unreachable: Vec<usize>,
}

impl ClassPaths {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    fn from_lists(net: &Network, lists: Vec<Vec<Vec<usize>>>) -> Self {
        let mut out = ClassPaths {
            by_od: vec![Vec::new(); net.num_od()],
            ..Default::default()
        };
        for (od, list) in lists.into_iter().enumerate() {
            if list.is_empty() {
                out.unreachable.push(od);
            }
            for links in list {
                out.by_od[od].push(out.paths.len());
                out.paths.push(Path::new(net, od, links));
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathSet {
    pub classes: [ClassPaths; NUM_CLASSES],
}

impl PathSet {
    pub fn class(&self, class: VehicleClass) -> &ClassPaths {
        &self.classes[class.index()]
    }

    /// Enumerates paths with car free-flow times and shares that topology
    /// with every class.
    pub fn shared(net: &Network, k_max: usize) -> Result<Self> {
        let car = enumerate_paths(net, k_max, VehicleClass::Car)?;
        Ok(PathSet {
            classes: [car.clone(), car],
        })
    }

    /// Enumerates paths separately for each class.
    pub fn per_class(net: &Network, k_max: usize) -> Result<Self> {
        Ok(PathSet {
            classes: [
                enumerate_paths(net, k_max, VehicleClass::Car)?,
                enumerate_paths(net, k_max, VehicleClass::Truck)?,
            ],
        })
    }
}

#[derive(Clone, Debug)]
struct Candidate {
    cost: f64,
    ids: Vec<LinkId>,
    links: Vec<usize>,
}

fn cmp_candidates(a: &Candidate, b: &Candidate) -> Ordering {
    if (a.cost - b.cost).abs() <= COST_EPS * a.cost.abs().max(1.0) {
        a.ids.cmp(&b.ids)
    } else {
        a.cost.total_cmp(&b.cost)
    }
}

struct HeapItem(Candidate, NodeId);

impl PartialEq for HeapItem {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapItem {}
impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        cmp_candidates(&other.0, &self.0).then_with(|| other.1.cmp(&self.1))
    }
}

/// Label-setting shortest path where equal costs are resolved by the
/// lexicographically smaller link-id sequence.
fn shortest(
    net: &Network,
    adj: &BTreeMap<NodeId, Vec<usize>>,
    weights: &[f64],
    from: NodeId,
    to: NodeId,
    banned_links: &HashSet<usize>,
    banned_nodes: &HashSet<NodeId>,
) -> Option<Candidate> {
    let mut best: BTreeMap<NodeId, Candidate> = BTreeMap::new();
    let mut heap = BinaryHeap::new();
    let start = Candidate {
        cost: 0.0,
        ids: Vec::new(),
        links: Vec::new(),
    };
    best.insert(from, start.clone());
    heap.push(HeapItem(start, from));
    let mut settled = HashSet::new();
    while let Some(HeapItem(label, node)) = heap.pop() {
        if !settled.insert(node) {
            continue;
        }
        if node == to {
            return Some(label);
        }
        for &l in adj.get(&node).map(Vec::as_slice).unwrap_or(&[]) {
            let link = net.link(l);
            if banned_links.contains(&l) || banned_nodes.contains(&link.to) || settled.contains(&link.to) {
                continue;
            }
            let mut next = label.clone();
            next.cost += weights[l];
            next.ids.push(link.id);
            next.links.push(l);
            let improves = best
                .get(&link.to)
                .is_none_or(|cur| cmp_candidates(&next, cur) == Ordering::Less);
            if improves {
                best.insert(link.to, next.clone());
                heap.push(HeapItem(next, link.to));
            }
        }
    }
    None
}

/// Up to `k_max` loopless shortest paths per OD pair under the class's
/// free-flow travel times (Yen's algorithm). Ties are broken by the
/// lexicographic link-id sequence. Unreachable pairs are logged and left
/// with an empty path list.
pub fn enumerate_paths(net: &Network, k_max: usize, class: VehicleClass) -> Result<ClassPaths> {
    if k_max == 0 {
        return Err(Error::InvalidInput("k_max must be at least 1".into()));
    }
    let adj = net.adjacency();
    let weights: Vec<f64> = net.links().iter().map(|l| l.free_flow_time(class)).collect();
    let mut lists = Vec::with_capacity(net.num_od());
    for od in net.od_pairs() {
        if od.origin == od.destination {
            return Err(Error::DegenerateOd(od.origin));
        }
        let found = yen(net, &adj, &weights, od.origin, od.destination, k_max);
        if found.is_empty() {
            warn!(
                "OD pair {} -> {} is unreachable and is dropped from estimation",
                od.origin, od.destination
            );
        }
        lists.push(found.into_iter().map(|c| c.links).collect());
    }
    Ok(ClassPaths::from_lists(net, lists))
}

fn yen(
    net: &Network,
    adj: &BTreeMap<NodeId, Vec<usize>>,
    weights: &[f64],
    from: NodeId,
    to: NodeId,
    k_max: usize,
) -> Vec<Candidate> {
    let empty_l = HashSet::new();
    let empty_n = HashSet::new();
    let Some(first) = shortest(net, adj, weights, from, to, &empty_l, &empty_n) else {
        return Vec::new();
    };
    let mut accepted = vec![first];
    let mut pool: Vec<Candidate> = Vec::new();
    while accepted.len() < k_max {
        let prev = accepted.last().unwrap().clone();
        for i in 0..prev.links.len() {
            let spur_node = net.link(prev.links[i]).from;
            let root = &prev.links[..i];
            let banned_links: HashSet<usize> = accepted
                .iter()
                .filter(|p| p.links.len() > i && &p.links[..i] == root)
                .map(|p| p.links[i])
                .collect();
            let banned_nodes: HashSet<NodeId> = root.iter().map(|&l| net.link(l).from).collect();
            let Some(spur) = shortest(net, adj, weights, spur_node, to, &banned_links, &banned_nodes)
            else {
                continue;
            };
            let mut links = root.to_vec();
            links.extend_from_slice(&spur.links);
            let cand = Candidate {
                cost: links.iter().map(|&l| weights[l]).sum(),
                ids: links.iter().map(|&l| net.link(l).id).collect(),
                links,
            };
            let dup = accepted.iter().chain(pool.iter()).any(|p| p.links == cand.links);
            if !dup {
                pool.push(cand);
            }
        }
        if pool.is_empty() {
            break;
        }
        let best = (0..pool.len())
            .min_by(|&a, &b| cmp_candidates(&pool[a], &pool[b]))
            .unwrap();
        accepted.push(pool.swap_remove(best));
    }
    accepted
}

/// Checks contiguity, endpoints and absence of repeated links.
pub(crate) fn check_path(net: &Network, od: usize, links: &[usize]) -> Result<()> {
    let pair = net
        .od_pairs()
        .get(od)
        .ok_or_else(|| Error::InvalidInput(format!("OD index {od} out of range")))?;
    let (Some(&first), Some(&last)) = (links.first(), links.last()) else {
        return Err(Error::InvalidInput("empty path".into()));
    };
    if net.link(first).from != pair.origin || net.link(last).to != pair.destination {
        return Err(Error::Topology(format!(
            "path does not connect {} -> {}",
            pair.origin, pair.destination
        )));
    }
    for w in links.windows(2) {
        if net.link(w[0]).to != net.link(w[1]).from {
            return Err(Error::Topology(format!(
                "links {} and {} are not consecutive",
                net.link(w[0]).id,
                net.link(w[1]).id
            )));
        }
    }
    let unique: HashSet<_> = links.iter().collect();
    if unique.len() != links.len() {
        return Err(Error::Topology("path repeats a link".into()));
    }
    Ok(())
}

/// Reads a path override file, one path per line:
/// `od_index,class,link_id;link_id;...`. A header line starting with
/// `od_index` is skipped.
pub fn load_path_file(net: &Network, path: &FsPath) -> Result<PathSet> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lists: [Vec<Vec<Vec<usize>>>; NUM_CLASSES] =
        std::array::from_fn(|_| vec![Vec::new(); net.num_od()]);
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        let loc = format!("{}:{}", path.display(), lineno + 1);
        if line.is_empty() || line.starts_with('#') || line.starts_with("od_index") {
            continue;
        }
        let mut parts = line.splitn(3, ',');
        let (Some(od), Some(class), Some(seq)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::parse(loc, "expected `od_index,class,link_ids`"));
        };
        let od: usize = od.trim().parse().map_err(|e| Error::parse(&loc, e))?;
        let class: VehicleClass = class.parse().map_err(|e| Error::parse(&loc, e))?;
        let mut links = Vec::new();
        for id in seq.split(';').map(str::trim).filter(|s| !s.is_empty()) {
            let id: LinkId = id.parse().map_err(|e| Error::parse(&loc, e))?;
            let idx = net
                .link_idx(id)
                .ok_or_else(|| Error::Topology(format!("{loc}: unknown link {id}")))?;
            links.push(idx);
        }
        check_path(net, od, &links)?;
        lists[class.index()]
            .get_mut(od)
            .ok_or_else(|| Error::parse(&loc, format!("OD index {od} out of range")))?
            .push(links);
    }
    let [car, truck] = lists;
    Ok(PathSet {
        classes: [ClassPaths::from_lists(net, car), ClassPaths::from_lists(net, truck)],
    })
}

pub fn write_path_file(net: &Network, paths: &PathSet, path: &FsPath) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = String::new();
    for c in VehicleClass::ALL {
        for p in &paths.class(c).paths {
            let ids: Vec<String> = p.link_ids(net).iter().map(|i| i.to_string()).collect();
            out.push_str(&format!("{},{},{}\n", p.od, c, ids.join(";")));
        }
    }
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Link, OdPair};
    use crate::synthetic::toy_network;

    fn link(id: u32, from: u32, to: u32, len: f64) -> Link {
        Link {
            id,
            from,
            to,
            length_km: len,
            free_flow_speed: [50.0, 40.0],
            capacity: [6000.0, 3600.0],
            jam_density: [540.0, 240.0],
            allows_parking: false,
            curb_capacity: 0.0,
            is_connector: false,
        }
    }

    #[test]
    fn toy_paths_are_loopless_and_sorted() {
        let net = toy_network();
        let ps = enumerate_paths(&net, 3, VehicleClass::Car).unwrap();
        for (od, list) in ps.by_od.iter().enumerate() {
            assert!((1..=3).contains(&list.len()), "od {od}: {} paths", list.len());
            for w in list.windows(2) {
                assert!(ps.paths[w[0]].free_flow_time[0] <= ps.paths[w[1]].free_flow_time[0] + 1e-9);
            }
            for &k in list {
                check_path(&net, od, &ps.paths[k].links).unwrap();
            }
        }
    }

    #[test]
    fn free_flow_time_matches_independent_sum() {
        let net = toy_network();
        let ps = PathSet::shared(&net, 3).unwrap();
        for c in VehicleClass::ALL {
            for p in &ps.class(c).paths {
                let mut t = 0.0;
                for &l in &p.links {
                    let link = &net.links()[l];
                    t += link.length_km * 3600.0 / link.free_flow_speed[c.index()];
                }
                assert!((t - p.free_flow_time[c.index()]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn enumeration_is_deterministic() {
        let net = toy_network();
        let a = PathSet::shared(&net, 4).unwrap();
        let b = PathSet::shared(&net, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ties_broken_by_link_id_sequence() {
        // two parallel equal-cost routes 1->2->4 and 1->3->4
        let links = vec![
            link(7, 1, 3, 1.0),
            link(8, 3, 4, 1.0),
            link(2, 1, 2, 1.0),
            link(9, 2, 4, 1.0),
        ];
        let net = Network::new(links, vec![OdPair { origin: 1, destination: 4 }]).unwrap();
        let ps = enumerate_paths(&net, 2, VehicleClass::Car).unwrap();
        let ids: Vec<_> = ps.paths.iter().map(|p| p.link_ids(&net)).collect();
        assert_eq!(ids, vec![vec![2, 9], vec![7, 8]]);
    }

    #[test]
    fn degenerate_od_is_error() {
        let links = vec![link(1, 1, 2, 1.0)];
        let net = Network::unchecked(links, vec![OdPair { origin: 1, destination: 1 }]);
        assert!(matches!(
            enumerate_paths(&net, 3, VehicleClass::Car),
            Err(Error::DegenerateOd(1))
        ));
    }

    #[test]
    fn unreachable_pair_is_dropped() {
        let links = vec![link(1, 1, 2, 1.0), link(2, 3, 4, 1.0)];
        let net = Network::new(links, vec![OdPair { origin: 1, destination: 4 }]).unwrap();
        let ps = enumerate_paths(&net, 3, VehicleClass::Car).unwrap();
        assert!(ps.is_empty());
        assert_eq!(ps.unreachable, vec![0]);
    }

    #[test]
    fn path_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let net = toy_network();
        let ps = PathSet::shared(&net, 3).unwrap();
        let f = dir.path().join("paths.txt");
        write_path_file(&net, &ps, &f).unwrap();
        assert_eq!(load_path_file(&net, &f).unwrap(), ps);
    }

    #[test]
    fn path_file_rejects_gap() {
        let dir = tempfile::tempdir().unwrap();
        let net = toy_network();
        let f = dir.path().join("paths.txt");
        std::fs::write(&f, "0,car,10;1;3;4;5;13\n").unwrap();
        assert!(matches!(load_path_file(&net, &f), Err(Error::Topology(_))));
    }
}
