use std::io::Write;

use serde::Serialize;

use crate::network::Network;
use crate::{Error, Result, VehicleClass, NUM_CLASSES};

/// Time on the simulation clock, in simulation steps.
pub type Step = u32;

/// One packet's stay on a link. A through traversal contributes one
/// increment to `A^m` at `enter` and one to `D^m` at `exit`; a parking stay
/// does the same on `A^p` / `D^p`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Traversal {
    pub packet: u32,
    /// Path tag: the path the packet was assigned to at departure.
    pub path: u32,
    /// Departure interval tag at the origin.
    pub depart_interval: u32,
    pub size: f64,
    pub enter: Step,
    /// When the packet reached the downstream end (through) or finished
    /// the free-flow run to the curb (parking).
    pub ready: Step,
    pub exit: Step,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum CurveKind {
    #[serde(rename = "Am")]
    ArrivalMoving,
    #[serde(rename = "Ap")]
    ArrivalParking,
    #[serde(rename = "Dm")]
    DepartureMoving,
    #[serde(rename = "Dp")]
    DeparturePark,
}

impl CurveKind {
    pub const ALL: [CurveKind; 4] = [
        CurveKind::ArrivalMoving,
        CurveKind::ArrivalParking,
        CurveKind::DepartureMoving,
        CurveKind::DeparturePark,
    ];

    fn is_parking(self) -> bool {
        matches!(self, CurveKind::ArrivalParking | CurveKind::DeparturePark)
    }

    fn is_arrival(self) -> bool {
        matches!(self, CurveKind::ArrivalMoving | CurveKind::ArrivalParking)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinkCurves {
    /// Sorted by `enter`.
    pub through: Vec<Traversal>,
    /// Sorted by `enter`.
    pub parking: Vec<Traversal>,
}

/// Tagged cumulative curves for every (link, class).
#[derive(Clone, Debug, PartialEq)]
pub struct CumulativeCurveSet {
    pub(crate) num_links: usize,
    pub(crate) horizon_intervals: usize,
    pub(crate) steps_per_interval: u32,
    pub(crate) sim_step_s: u32,
    pub(crate) cells: Vec<LinkCurves>,
}

impl CumulativeCurveSet {
    pub(crate) fn new(num_links: usize, horizon_intervals: usize, steps_per_interval: u32, sim_step_s: u32) -> Self {
        CumulativeCurveSet {
            num_links,
            horizon_intervals,
            steps_per_interval,
            sim_step_s,
            cells: vec![LinkCurves::default(); num_links * NUM_CLASSES],
        }
    }

    pub fn num_links(&self) -> usize {
        self.num_links
    }

    pub fn horizon_intervals(&self) -> usize {
        self.horizon_intervals
    }

    pub fn sim_step_s(&self) -> u32 {
        self.sim_step_s
    }

    pub fn steps_per_interval(&self) -> u32 {
        self.steps_per_interval
    }

    pub fn horizon_steps(&self) -> Step {
        self.steps_per_interval * self.horizon_intervals as u32
    }

    #[inline]
    pub fn cell(&self, link: usize, class: VehicleClass) -> &LinkCurves {
        &self.cells[link * NUM_CLASSES + class.index()]
    }

    #[inline]
    pub(crate) fn cell_mut(&mut self, link: usize, class: VehicleClass) -> &mut LinkCurves {
        &mut self.cells[link * NUM_CLASSES + class.index()]
    }

    /// Interval index of a step; may be `>= horizon_intervals`.
    #[inline]
    pub fn interval_of(&self, step: Step) -> usize {
        (step / self.steps_per_interval) as usize
    }

    fn check(&self, link: usize, interval: usize) -> Result<()> {
        if link >= self.num_links {
            return Err(Error::InvalidInput(format!("unknown link index {link}")));
        }
        if interval >= self.horizon_intervals {
            return Err(Error::InvalidInput(format!(
                "interval {interval} outside horizon of {}",
                self.horizon_intervals
            )));
        }
        Ok(())
    }

    /// Increments of one curve as `(step, size, traversal)`, sorted by step.
    pub fn increments(&self, link: usize, class: VehicleClass, kind: CurveKind) -> Vec<(Step, &Traversal)> {
        let cell = self.cell(link, class);
        let src = if kind.is_parking() { &cell.parking } else { &cell.through };
        let mut out: Vec<(Step, &Traversal)> = src
            .iter()
            .map(|tr| (if kind.is_arrival() { tr.enter } else { tr.exit }, tr))
            .collect();
        out.sort_by_key(|(s, _)| *s);
        out
    }

    /// Curve value at `step`: total size of increments strictly before it.
    pub fn cumulative(&self, link: usize, class: VehicleClass, kind: CurveKind, step: Step) -> f64 {
        let cell = self.cell(link, class);
        let src = if kind.is_parking() { &cell.parking } else { &cell.through };
        src.iter()
            .filter(|tr| (if kind.is_arrival() { tr.enter } else { tr.exit }) < step)
            .map(|tr| tr.size)
            .sum()
    }

    /// Remaining vehicles `A^m + A^p - D^m - D^p` at the end of `interval`.
    pub fn remaining_at_end(&self, link: usize, class: VehicleClass, interval: usize) -> f64 {
        let end = (interval as Step + 1) * self.steps_per_interval;
        CurveKind::ALL
            .iter()
            .map(|&k| {
                let v = self.cumulative(link, class, k, end);
                if k.is_arrival() {
                    v
                } else {
                    -v
                }
            })
            .sum()
    }

    /// Writes the curves as JSON lines
    /// `{link, class, curve, t, value, tag:[path, interval]}`, where `t` is
    /// in seconds and `value` is the curve value after the increment.
    pub fn write_dump<W: Write>(&self, net: &Network, mut w: W) -> Result<()> {
        #[derive(Serialize)]
        struct Line {
            link: u32,
            class: VehicleClass,
            curve: CurveKind,
            t: u64,
            value: f64,
            tag: [u32; 2],
        }
        for link in 0..self.num_links {
            for class in VehicleClass::ALL {
                for kind in CurveKind::ALL {
                    let mut acc = 0.0;
                    for (step, tr) in self.increments(link, class, kind) {
                        acc += tr.size;
                        let line = Line {
                            link: net.link(link).id,
                            class,
                            curve: kind,
                            t: step as u64 * self.sim_step_s as u64,
                            value: acc,
                            tag: [tr.path, tr.depart_interval],
                        };
                        serde_json::to_writer(&mut w, &line)
                            .map_err(|e| Error::io("curve dump", std::io::Error::other(e)))?;
                        w.write_all(b"\n").map_err(|e| Error::io("curve dump", e))?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Free-flow traversal time rounded up to a whole number of steps.
pub fn free_flow_steps(net: &Network, link: usize, class: VehicleClass, sim_step_s: u32) -> Step {
    let t = net.link(link).free_flow_time(class) / sim_step_s as f64;
    (t - 1e-9).ceil().max(1.0) as Step
}

/// `x`: total arrivals (through plus parking) during `interval`.
pub fn extract_link_flow(
    curves: &CumulativeCurveSet,
    link: usize,
    class: VehicleClass,
    interval: usize,
) -> Result<f64> {
    curves.check(link, interval)?;
    let lo = interval as Step * curves.steps_per_interval;
    let hi = lo + curves.steps_per_interval;
    let cell = curves.cell(link, class);
    Ok(cell
        .through
        .iter()
        .chain(&cell.parking)
        .filter(|tr| tr.enter >= lo && tr.enter < hi)
        .map(|tr| tr.size)
        .sum())
}

/// Through-vehicle traversal time for the first through arrival in the
/// interval, `D^{m,-1}(A^m(t)) - t`. Falls back to the step-rounded
/// free-flow time when no through vehicle arrives.
pub fn extract_travel_time(
    curves: &CumulativeCurveSet,
    net: &Network,
    link: usize,
    class: VehicleClass,
    interval: usize,
) -> Result<f64> {
    curves.check(link, interval)?;
    let step_s = curves.sim_step_s as f64;
    let fallback = free_flow_steps(net, link, class, curves.sim_step_s) as f64 * step_s;
    let lo = interval as Step * curves.steps_per_interval;
    let hi = lo + curves.steps_per_interval;
    let through = &curves.cell(link, class).through;
    let i = through.partition_point(|tr| tr.enter < lo);
    match through.get(i) {
        Some(first) if first.enter < hi => {
            let t = first.enter;
            let last_exit = through[i..]
                .iter()
                .take_while(|tr| tr.enter == t)
                .map(|tr| tr.exit)
                .max()
                .unwrap_or(first.exit);
            Ok((last_exit - t) as f64 * step_s)
        }
        _ => Ok(fallback),
    }
}

/// Remaining vehicles averaged over intervals `[t - delta, t + delta]`,
/// clipped to the horizon.
pub fn extract_density(
    curves: &CumulativeCurveSet,
    link: usize,
    class: VehicleClass,
    interval: usize,
    delta: usize,
) -> Result<f64> {
    curves.check(link, interval)?;
    let (lo, hi) = window(interval, delta, curves.horizon_intervals);
    let sum: f64 = (lo..hi).map(|t| curves.remaining_at_end(link, class, t)).sum();
    Ok(sum / (hi - lo) as f64)
}

#[inline]
fn window(t: usize, delta: usize, horizon: usize) -> (usize, usize) {
    (t.saturating_sub(delta), (t + delta + 1).min(horizon))
}

/// Moving average over `[t - delta, t + delta]` within each link block of
/// length `horizon`.
pub fn smooth(values: &[f64], horizon: usize, delta: usize) -> Vec<f64> {
    if delta == 0 {
        return values.to_vec();
    }
    let mut out = vec![0.0; values.len()];
    for (block_in, block_out) in values.chunks(horizon).zip(out.chunks_mut(horizon)) {
        for (t, o) in block_out.iter_mut().enumerate() {
            let (lo, hi) = window(t, delta, horizon);
            *o = block_in[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
        }
    }
    out
}

/// Adjoint of [`smooth`].
pub fn smooth_transpose(adj: &[f64], horizon: usize, delta: usize) -> Vec<f64> {
    if delta == 0 {
        return adj.to_vec();
    }
    let mut out = vec![0.0; adj.len()];
    for (block_in, block_out) in adj.chunks(horizon).zip(out.chunks_mut(horizon)) {
        for (t, &a) in block_in.iter().enumerate() {
            let (lo, hi) = window(t, delta, horizon);
            let w = a / (hi - lo) as f64;
            block_out[lo..hi].iter_mut().for_each(|o| *o += w);
        }
    }
    out
}

/// Link states per class, each indexed by `link * intervals + interval`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkStateTensor {
    pub num_links: usize,
    pub intervals: usize,
    /// Arrivals per interval, vehicles.
    pub flow: [Vec<f64>; NUM_CLASSES],
    /// Through travel time, seconds.
    pub travel_time: [Vec<f64>; NUM_CLASSES],
    /// Remaining vehicles at interval end, unsmoothed.
    pub remaining: [Vec<f64>; NUM_CLASSES],
    /// Remaining vehicles after the configured window average; this is the
    /// modelled `k * l`.
    pub density: [Vec<f64>; NUM_CLASSES],
}

impl LinkStateTensor {
    #[inline]
    pub fn idx(&self, link: usize, interval: usize) -> usize {
        link * self.intervals + interval
    }

    pub fn from_curves(curves: &CumulativeCurveSet, net: &Network, delta: usize) -> Self {
        let t_n = curves.horizon_intervals;
        let n = curves.num_links * t_n;
        let mut s = LinkStateTensor {
            num_links: curves.num_links,
            intervals: t_n,
            flow: std::array::from_fn(|_| vec![0.0; n]),
            travel_time: std::array::from_fn(|_| vec![0.0; n]),
            remaining: std::array::from_fn(|_| vec![0.0; n]),
            density: std::array::from_fn(|_| vec![0.0; n]),
        };
        for link in 0..curves.num_links {
            for class in VehicleClass::ALL {
                let ci = class.index();
                let cell = curves.cell(link, class);
                let mut dep = vec![0.0; t_n];
                for tr in cell.through.iter().chain(&cell.parking) {
                    let ta = curves.interval_of(tr.enter);
                    if ta < t_n {
                        s.flow[ci][link * t_n + ta] += tr.size;
                    }
                    let td = curves.interval_of(tr.exit);
                    if td < t_n {
                        dep[td] += tr.size;
                    }
                }
                let mut acc = 0.0;
                for (t, d) in dep.iter().enumerate() {
                    let i = link * t_n + t;
                    acc += s.flow[ci][i] - d;
                    s.remaining[ci][i] = acc;
                    s.travel_time[ci][i] = extract_travel_time(curves, net, link, class, t)
                        .expect("link and interval are in range");
                }
            }
        }
        for c in 0..NUM_CLASSES {
            s.density[c] = smooth(&s.remaining[c], t_n, delta);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tr(enter: Step, exit: Step, size: f64) -> Traversal {
        Traversal {
            packet: 0,
            path: 0,
            depart_interval: 0,
            size,
            enter,
            ready: enter,
            exit,
        }
    }

    fn one_link(through: Vec<Traversal>, parking: Vec<Traversal>) -> CumulativeCurveSet {
        let mut c = CumulativeCurveSet::new(1, 3, 180, 5);
        c.cell_mut(0, VehicleClass::Car).through = through;
        c.cell_mut(0, VehicleClass::Car).parking = parking;
        c
    }

    #[test]
    fn empty_curves_give_zero() {
        let c = one_link(vec![], vec![]);
        assert_eq!(extract_link_flow(&c, 0, VehicleClass::Car, 1).unwrap(), 0.0);
        assert_eq!(extract_density(&c, 0, VehicleClass::Car, 1, 0).unwrap(), 0.0);
    }

    #[test]
    fn flow_counts_moving_and_parking() {
        let through = (0..10).map(|i| tr(200 + i, 900, 1.0)).collect();
        let parking = vec![tr(250, 600, 1.0), tr(300, 700, 1.0)];
        let c = one_link(through, parking);
        assert_eq!(extract_link_flow(&c, 0, VehicleClass::Car, 1).unwrap(), 12.0);
    }

    #[test]
    fn density_counts_through_and_parked() {
        // 3 through vehicles still on the link plus 2 parked at end of interval 1
        let through = vec![tr(10, 20, 1.0), tr(300, 400, 1.0), tr(310, 400, 1.0), tr(320, 400, 1.0)];
        let parking = vec![tr(100, 500, 1.0), tr(120, 500, 1.0)];
        let c = one_link(through, parking);
        assert_eq!(c.remaining_at_end(0, VehicleClass::Car, 1), 5.0);
        assert_eq!(extract_density(&c, 0, VehicleClass::Car, 1, 0).unwrap(), 5.0);
    }

    #[test]
    fn window_average() {
        let v = smooth(&[4.0, 6.0, 8.0], 3, 1);
        assert_eq!(v[1], 6.0);
        assert_eq!(v[0], 5.0);
    }

    #[test]
    fn smoothing_adjoint() {
        let x = [1.0, -2.0, 3.5, 0.5, 2.0, 7.0, -1.0, 0.25];
        let y = [0.3, 1.1, -0.7, 2.0, 0.0, -3.0, 1.5, 0.9];
        for delta in 0..4 {
            let sx = smooth(&x, 4, delta);
            let sty = smooth_transpose(&y, 4, delta);
            let lhs: f64 = sx.iter().zip(&y).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&sty).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_horizon_interval_is_error() {
        let c = one_link(vec![], vec![]);
        assert!(extract_link_flow(&c, 0, VehicleClass::Car, 3).is_err());
        assert!(extract_link_flow(&c, 1, VehicleClass::Car, 0).is_err());
    }
}
