use crate::estimator::DemandTensor;
use crate::network::PathSet;
use crate::{Error, Result, VehicleClass, NUM_CLASSES};

/// Per-class values indexed by `path * intervals + interval`.
#[derive(Clone, Debug, PartialEq)]
pub struct PathTensor {
    intervals: usize,
    values: [Vec<f64>; NUM_CLASSES],
}

impl PathTensor {
    pub fn zeros(paths: &PathSet, intervals: usize) -> Self {
        PathTensor {
            intervals,
            values: std::array::from_fn(|c| vec![0.0; paths.classes[c].len() * intervals]),
        }
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    #[inline]
    pub fn get(&self, class: VehicleClass, path: usize, t: usize) -> f64 {
        self.values[class.index()][path * self.intervals + t]
    }

    #[inline]
    pub fn set(&mut self, class: VehicleClass, path: usize, t: usize, v: f64) {
        self.values[class.index()][path * self.intervals + t] = v;
    }

    pub fn class_slice(&self, class: VehicleClass) -> &[f64] {
        &self.values[class.index()]
    }

    pub fn class_slice_mut(&mut self, class: VehicleClass) -> &mut [f64] {
        &mut self.values[class.index()]
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().flatten().for_each(|v| *v *= s);
        out
    }

    pub(crate) fn shape_matches(&self, paths: &PathSet) -> bool {
        (0..NUM_CLASSES).all(|c| self.values[c].len() == paths.classes[c].len() * self.intervals)
    }
}

/// Path flows `f[class][path][departure interval]`, vehicles.
pub type PathFlowTensor = PathTensor;
/// Route choice proportions `p[class][path][interval]`.
pub type RouteProportions = PathTensor;
/// Path costs in seconds.
pub type PathCosts = PathTensor;

/// Constant free-flow path costs for every interval.
pub fn free_flow_costs(paths: &PathSet, intervals: usize) -> PathCosts {
    let mut out = PathTensor::zeros(paths, intervals);
    for c in VehicleClass::ALL {
        for (k, p) in paths.class(c).paths.iter().enumerate() {
            for t in 0..intervals {
                out.set(c, k, t, p.free_flow_time[c.index()]);
            }
        }
    }
    out
}

/// Multinomial logit over `-logit_scale * cost` within each OD's path set.
pub fn route_choice(paths: &PathSet, costs: &PathCosts, logit_scale: f64) -> Result<RouteProportions> {
    if !costs.shape_matches(paths) {
        return Err(Error::Dimension("path costs do not match the path set".into()));
    }
    if !(logit_scale >= 0.0 && logit_scale.is_finite()) {
        return Err(Error::InvalidInput(format!("logit scale {logit_scale} must be finite and >= 0")));
    }
    let t_n = costs.intervals();
    let mut p = PathTensor::zeros(paths, t_n);
    for c in VehicleClass::ALL {
        let cp = paths.class(c);
        if cp.is_empty() {
            return Err(Error::InvalidInput(format!("empty path set for class {c}")));
        }
        for (od, list) in cp.by_od.iter().enumerate() {
            if list.is_empty() && !cp.unreachable.contains(&od) {
                return Err(Error::InvalidInput(format!("OD {od} has an empty path set for {c}")));
            }
            for t in 0..t_n {
                let mut min_cost = f64::INFINITY;
                for &k in list {
                    let cost = costs.get(c, k, t);
                    if !(cost.is_finite() && cost > 0.0) {
                        return Err(Error::InvalidInput(format!(
                            "path cost must be finite and positive, got {cost}"
                        )));
                    }
                    min_cost = min_cost.min(cost);
                }
                let z: f64 = list
                    .iter()
                    .map(|&k| (-logit_scale * (costs.get(c, k, t) - min_cost)).exp())
                    .sum();
                for &k in list {
                    let w = (-logit_scale * (costs.get(c, k, t) - min_cost)).exp();
                    p.set(c, k, t, w / z);
                }
            }
        }
    }
    Ok(p)
}

/// `f = p * q` per path and departure interval.
pub fn assign_path_flows(
    q: &DemandTensor,
    p: &RouteProportions,
    paths: &PathSet,
) -> Result<PathFlowTensor> {
    if !p.shape_matches(paths) || q.intervals() != p.intervals() {
        return Err(Error::Dimension("route proportions do not match demand".into()));
    }
    q.check()?;
    let t_n = q.intervals();
    let mut f = PathTensor::zeros(paths, t_n);
    for c in VehicleClass::ALL {
        for (k, path) in paths.class(c).paths.iter().enumerate() {
            if path.od >= q.num_od() {
                return Err(Error::Dimension(format!("path OD {} outside demand", path.od)));
            }
            for t in 0..t_n {
                f.set(c, k, t, p.get(c, k, t) * q.get(c, path.od, t));
            }
        }
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Link, Network, OdPair};
    use proptest::prelude::*;

    fn two_route_net(len_b: f64) -> (Network, PathSet) {
        let mk = |id, from, to, len| Link {
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
        };
        let net = Network::new(
            vec![mk(1, 1, 2, 1.0), mk(2, 1, 3, len_b), mk(3, 3, 2, len_b)],
            vec![OdPair { origin: 1, destination: 2 }],
        )
        .unwrap();
        let ps = PathSet::shared(&net, 2).unwrap();
        (net, ps)
    }

    #[test]
    fn equal_costs_split_evenly() {
        let (_, ps) = two_route_net(0.5);
        let p = route_choice(&ps, &free_flow_costs(&ps, 1), 0.05).unwrap();
        assert!((p.get(VehicleClass::Car, 0, 0) - 0.5).abs() < 1e-12);
        assert!((p.get(VehicleClass::Car, 1, 0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_path_gets_everything() {
        let (_, ps) = two_route_net(0.5);
        let single = PathSet {
            classes: std::array::from_fn(|c| {
                let mut cp = ps.classes[c].clone();
                cp.paths.truncate(1);
                cp.by_od = vec![vec![0]];
                cp
            }),
        };
        let p = route_choice(&single, &free_flow_costs(&single, 2), 0.05).unwrap();
        assert_eq!(p.get(VehicleClass::Truck, 0, 1), 1.0);
    }

    #[test]
    fn logit_closed_form() {
        // direct path 72 s, detour 2 x 72 s
        let (_, ps) = two_route_net(1.0);
        let p = route_choice(&ps, &free_flow_costs(&ps, 1), 1.0 / 72.0).unwrap();
        let e1 = (-1.0f64).exp();
        let e2 = (-2.0f64).exp();
        assert!((p.get(VehicleClass::Car, 0, 0) - e1 / (e1 + e2)).abs() < 1e-12);
        assert!((p.get(VehicleClass::Car, 0, 0) - 0.7311).abs() < 1e-4);
        assert!((p.get(VehicleClass::Car, 1, 0) - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn assignment_arithmetic_and_zero() {
        let (net, ps) = two_route_net(1.0);
        let mut p = PathTensor::zeros(&ps, 1);
        p.set(VehicleClass::Car, 0, 0, 0.7);
        p.set(VehicleClass::Car, 1, 0, 0.3);
        let mut q = DemandTensor::zeros(net.num_od(), 1);
        q.set(VehicleClass::Car, 0, 0, 100.0);
        let f = assign_path_flows(&q, &p, &ps).unwrap();
        assert!((f.get(VehicleClass::Car, 0, 0) - 70.0).abs() < 1e-12);
        assert!((f.get(VehicleClass::Car, 1, 0) - 30.0).abs() < 1e-12);

        let zero = assign_path_flows(&DemandTensor::zeros(1, 1), &p, &ps).unwrap();
        assert!(zero.class_slice(VehicleClass::Car).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn negative_demand_rejected() {
        let (_, ps) = two_route_net(1.0);
        let p = route_choice(&ps, &free_flow_costs(&ps, 1), 0.01).unwrap();
        let mut q = DemandTensor::zeros(1, 1);
        q.set(VehicleClass::Car, 0, 0, -1.0);
        assert!(assign_path_flows(&q, &p, &ps).is_err());
    }

    proptest! {
        #[test]
        fn path_flows_sum_to_demand(
            qs in prop::collection::vec(0.0f64..500.0, 6 * 4 * 2),
            costs in prop::collection::vec(30.0f64..900.0, 64),
            scale in 0.0f64..0.1,
        ) {
            let net = crate::synthetic::toy_network();
            let ps = PathSet::shared(&net, 3).unwrap();
            let t_n = 4;
            let mut c = PathTensor::zeros(&ps, t_n);
            for cl in VehicleClass::ALL {
                for (i, v) in c.class_slice_mut(cl).iter_mut().enumerate() {
                    *v = costs[i % costs.len()];
                }
            }
            let p = route_choice(&ps, &c, scale).unwrap();
            let q = DemandTensor::from_values(6, t_n, [qs[..24].to_vec(), qs[24..].to_vec()]).unwrap();
            let f = assign_path_flows(&q, &p, &ps).unwrap();
            for cl in VehicleClass::ALL {
                for (od, list) in ps.class(cl).by_od.iter().enumerate() {
                    for t in 0..t_n {
                        let s: f64 = list.iter().map(|&k| f.get(cl, k, t)).sum();
                        let want = q.get(cl, od, t);
                        prop_assert!((s - want).abs() <= 1e-12 * want.max(1.0));
                    }
                }
            }
        }
    }
}
