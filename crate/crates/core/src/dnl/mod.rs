//! Mesoscopic dynamic network loading.
//!
//! Path flows are cut into packets and pushed through a point-queue network:
//! a packet entering a link runs at free-flow speed to the downstream end and
//! then waits for the link's discharge server, which all classes share in
//! passenger-car equivalents. Packets designated to park leave the running
//! lane at their path's parking link, occupy the curb for a fixed dwell time
//! and then continue; when the curb is full they stay in through traffic.
//!
//! Every stay is recorded as a tagged [`Traversal`], which is all that is
//! needed to read off cumulative curves, link states and DAR matrices.

mod curves;
mod invariants;
mod route;
mod sensitivity;

pub use curves::{
    extract_density, extract_link_flow, extract_travel_time, free_flow_steps, smooth,
    smooth_transpose, CumulativeCurveSet, CurveKind, LinkCurves, LinkStateTensor, Step, Traversal,
};
pub use route::{
    assign_path_flows, free_flow_costs, route_choice, PathCosts, PathFlowTensor, PathTensor,
    RouteProportions,
};
pub use invariants::check_invariants;
pub use sensitivity::{link_travel_time_response, travel_time_sensitivity};

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::network::{Network, PathSet};
use crate::{Error, Result, VehicleClass};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DnlConfig {
    pub sim_step_s: u32,
    pub interval_s: u32,
    pub horizon_intervals: usize,
    /// Logit dispersion for pre-trip route choice, 1/s.
    pub logit_scale: f64,
    /// Share of each path's packets that park on the path's parking link.
    pub parking_fraction: f64,
    pub dwell_time_s: f64,
    /// Share of packets that re-pick the fastest remaining path at each node.
    pub enroute_fraction: f64,
    /// Half-width, in intervals, of the density averaging window.
    pub density_smoothing: usize,
    /// Packet size in vehicles; the remainder of a path flow becomes one
    /// fractional packet.
    pub packet_size: f64,
    pub truck_pce: f64,
}

impl Default for DnlConfig {
    fn default() -> Self {
        DnlConfig {
            sim_step_s: 5,
            interval_s: 900,
            horizon_intervals: 10,
            logit_scale: 1.0 / 72.0,
            parking_fraction: 0.2,
            dwell_time_s: 1800.0,
            enroute_fraction: 0.0,
            density_smoothing: 0,
            packet_size: 1.0,
            truck_pce: 2.0,
        }
    }
}

impl DnlConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.sim_step_s == 0 || self.interval_s == 0 || self.interval_s % self.sim_step_s != 0 {
            return bad(format!(
                "sim step {} s must divide interval {} s",
                self.sim_step_s, self.interval_s
            ));
        }
        if self.horizon_intervals == 0 {
            return bad("horizon must have at least one interval".into());
        }
        for (name, v) in [
            ("parking_fraction", self.parking_fraction),
            ("enroute_fraction", self.enroute_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if !(self.dwell_time_s >= 0.0 && self.dwell_time_s.is_finite()) {
            return bad("dwell time must be finite and non-negative".into());
        }
        if !(self.packet_size > 0.0 && self.packet_size.is_finite()) {
            return bad("packet size must be positive".into());
        }
        if !(self.truck_pce > 0.0 && self.truck_pce.is_finite()) {
            return bad("truck PCE must be positive".into());
        }
        if !(self.logit_scale >= 0.0 && self.logit_scale.is_finite()) {
            return bad("logit scale must be finite and non-negative".into());
        }
        Ok(())
    }

    pub fn steps_per_interval(&self) -> u32 {
        self.interval_s / self.sim_step_s
    }

    pub fn pce(&self, class: VehicleClass) -> f64 {
        match class {
            VehicleClass::Car => 1.0,
            VehicleClass::Truck => self.truck_pce,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DnlOutput {
    pub curves: CumulativeCurveSet,
    pub states: LinkStateTensor,
    /// True when every packet left every link before the horizon ended.
    /// When false, DAR column sums fall short of one.
    pub cleared: bool,
    /// Vehicles released at origins.
    pub departed: f64,
    /// Vehicles that reached their destination (at any time).
    pub arrived: f64,
    /// Last event time, in steps.
    pub completion_step: Step,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    Enter,
    Ready,
    CurbExit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Event {
    time: Step,
    seq: u64,
    packet: u32,
    kind: EventKind,
    hop: u16,
}

struct Packet {
    class: VehicleClass,
    tag_path: u32,
    path: u32,
    depart_interval: u32,
    size: f64,
    parks: bool,
    enroute: bool,
    parked: bool,
    /// Index into the current link's through or parking record list.
    record: usize,
}

/// Selects `round(frac * n)`-ish members of a sequence with a random phase,
/// so the selected share is exact up to one member.
fn phased_pick(j: usize, frac: f64, phase: f64) -> bool {
    if frac <= 0.0 {
        return false;
    }
    ((j + 1) as f64 * frac + phase).floor() > (j as f64 * frac + phase).floor()
}

/// Runs the loader on path flows `f`. The simulation continues past the
/// horizon until every packet has reached its destination; curves beyond the
/// horizon are kept but ignored by interval-based extraction.
pub fn run_dnl(
    net: &Network,
    paths: &PathSet,
    f: &PathFlowTensor,
    cfg: &DnlConfig,
    seed: u64,
) -> Result<DnlOutput> {
    cfg.validate()?;
    if f.intervals() != cfg.horizon_intervals {
        return Err(Error::Dimension(format!(
            "path flows cover {} intervals, horizon is {}",
            f.intervals(),
            cfg.horizon_intervals
        )));
    }
    if !f.shape_matches(paths) {
        return Err(Error::Dimension("path flows do not match the path set".into()));
    }
    for c in VehicleClass::ALL {
        if let Some(v) = f.class_slice(c).iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidInput(format!("path flow {v} must be finite and >= 0")));
        }
    }

    let spi = cfg.steps_per_interval();
    let step_s = cfg.sim_step_s as f64;
    let n_links = net.num_links();
    let fft: Vec<[Step; 2]> = (0..n_links)
        .map(|l| VehicleClass::ALL.map(|c| free_flow_steps(net, l, c, cfg.sim_step_s)))
        .collect();
    let service_per_pce: Vec<f64> = net.links().iter().map(|l| 3600.0 / l.capacity[0]).collect();
    let dwell_steps = (cfg.dwell_time_s / step_s - 1e-9).ceil().max(0.0) as Step;

    let mut curves = CumulativeCurveSet::new(n_links, cfg.horizon_intervals, spi, cfg.sim_step_s);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut packets: Vec<Packet> = Vec::new();
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    let mut push = |heap: &mut BinaryHeap<Reverse<Event>>, time, packet, kind, hop| {
        heap.push(Reverse(Event {
            time,
            seq,
            packet,
            kind,
            hop,
        }));
        seq += 1;
    };

    let mut departed = 0.0;
    for class in VehicleClass::ALL {
        for (k, _) in paths.class(class).paths.iter().enumerate() {
            for t1 in 0..cfg.horizon_intervals {
                let flow = f.get(class, k, t1);
                // phases are drawn for every cell so the stream does not depend on f
                let park_phase: f64 = rng.gen();
                let route_phase: f64 = rng.gen();
                if flow <= 0.0 {
                    continue;
                }
                let full = (flow / cfg.packet_size).floor() as usize;
                let rest = flow - full as f64 * cfg.packet_size;
                let n = full + usize::from(rest > 1e-12 * flow.max(1.0));
                for j in 0..n {
                    let size = if j < full { cfg.packet_size } else { rest };
                    let release_s =
                        (t1 as f64 + (j as f64 + 0.5) / n as f64) * cfg.interval_s as f64;
                    let release = (release_s / step_s).floor() as Step;
                    let id = packets.len() as u32;
                    packets.push(Packet {
                        class,
                        tag_path: k as u32,
                        path: k as u32,
                        depart_interval: t1 as u32,
                        size,
                        parks: phased_pick(j, cfg.parking_fraction, park_phase),
                        enroute: phased_pick(j, cfg.enroute_fraction, route_phase),
                        parked: false,
                        record: usize::MAX,
                    });
                    departed += size;
                    push(&mut heap, release, id, EventKind::Enter, 0);
                }
            }
        }
    }

    let mut server_free = vec![0.0f64; n_links];
    let mut curb_used = vec![0.0f64; n_links];
    let mut arrived = 0.0;
    let mut completion = 0;

    while let Some(Reverse(ev)) = heap.pop() {
        completion = completion.max(ev.time);
        let p = &mut packets[ev.packet as usize];
        let class = p.class;
        let ci = class.index();
        let hop = ev.hop as usize;
        match ev.kind {
            EventKind::Enter => {
                if p.enroute && hop > 0 {
                    p.path = reroute(paths, class, p.path as usize, hop, &fft, &server_free, ev.time, step_s)
                        as u32;
                }
                let path = &paths.class(class).paths[p.path as usize];
                let link = path.links[hop];
                let l = net.link(link);
                let ready = ev.time + fft[link][ci];
                let parks_here = p.parks && !p.parked && path.parking_link == Some(link);
                let fits = curb_used[link] + p.size <= l.curb_capacity + 1e-9;
                let mut tr = Traversal {
                    packet: ev.packet,
                    path: p.tag_path,
                    depart_interval: p.depart_interval,
                    size: p.size,
                    enter: ev.time,
                    ready,
                    exit: Step::MAX,
                };
                if parks_here && fits {
                    curb_used[link] += p.size;
                    p.parked = true;
                    tr.exit = ready + dwell_steps;
                    let cell = curves.cell_mut(link, class);
                    p.record = cell.parking.len();
                    cell.parking.push(tr);
                    push(&mut heap, tr.exit, ev.packet, EventKind::CurbExit, ev.hop);
                } else {
                    let cell = curves.cell_mut(link, class);
                    p.record = cell.through.len();
                    cell.through.push(tr);
                    push(&mut heap, ready, ev.packet, EventKind::Ready, ev.hop);
                }
            }
            EventKind::Ready => {
                let path = &paths.class(class).paths[p.path as usize];
                let link = path.links[hop];
                let now_s = ev.time as f64 * step_s;
                let start = now_s.max(server_free[link]);
                server_free[link] = start + p.size * cfg.pce(class) * service_per_pce[link];
                let exit = ((start / step_s) + 1e-9).floor() as Step;
                curves.cell_mut(link, class).through[p.record].exit = exit;
                if hop + 1 < path.links.len() {
                    push(&mut heap, exit, ev.packet, EventKind::Enter, ev.hop + 1);
                } else {
                    arrived += p.size;
                    completion = completion.max(exit);
                }
            }
            EventKind::CurbExit => {
                let path = &paths.class(class).paths[p.path as usize];
                let link = path.links[hop];
                curb_used[link] -= p.size;
                if hop + 1 < path.links.len() {
                    push(&mut heap, ev.time, ev.packet, EventKind::Enter, ev.hop + 1);
                } else {
                    arrived += p.size;
                }
            }
        }
    }

    let horizon = curves.horizon_steps();
    let cleared = curves
        .cells
        .iter()
        .flat_map(|c| c.through.iter().chain(&c.parking))
        .all(|tr| tr.exit < horizon);
    let states = LinkStateTensor::from_curves(&curves, net, cfg.density_smoothing);
    Ok(DnlOutput {
        curves,
        states,
        cleared,
        departed,
        arrived,
        completion_step: completion,
    })
}

/// Fastest path in the same OD set that shares the links already driven,
/// judged by free-flow time plus the current backlog of each link's server.
#[allow(clippy::too_many_arguments)]
fn reroute(
    paths: &PathSet,
    class: VehicleClass,
    current: usize,
    hop: usize,
    fft: &[[Step; 2]],
    server_free: &[f64],
    now: Step,
    step_s: f64,
) -> usize {
    let cp = paths.class(class);
    let cur = &cp.paths[current];
    let prefix = &cur.links[..hop];
    let now_s = now as f64 * step_s;
    let cost = |k: usize| -> f64 {
        cp.paths[k].links[hop..]
            .iter()
            .map(|&l| fft[l][class.index()] as f64 * step_s + (server_free[l] - now_s).max(0.0))
            .sum()
    };
    cp.by_od[cur.od]
        .iter()
        .copied()
        .filter(|&k| cp.paths[k].links.len() > hop && cp.paths[k].links[..hop] == *prefix)
        .min_by(|&a, &b| cost(a).total_cmp(&cost(b)).then(a.cmp(&b)))
        .unwrap_or(current)
}

#[cfg(test)]
mod tests;
