//! Built-in networks and seeded ground-truth demand generators.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::estimator::DemandTensor;
use crate::network::{Link, Network, OdPair};

fn segment(
    id: u32,
    from: u32,
    to: u32,
    length_km: f64,
    ffs: [f64; 2],
    cap: [f64; 2],
    jam: [f64; 2],
) -> Link {
    Link {
        id,
        from,
        to,
        length_km,
        free_flow_speed: ffs,
        capacity: cap,
        jam_density: jam,
        allows_parking: false,
        curb_capacity: 0.0,
        is_connector: false,
    }
}

fn connector(id: u32, from: u32, to: u32) -> Link {
    Link {
        id,
        from,
        to,
        length_km: 0.1,
        free_flow_speed: [50.0, 40.0],
        capacity: [10000.0, 6000.0],
        jam_density: [540.0, 240.0],
        allows_parking: false,
        curb_capacity: 0.0,
        is_connector: true,
    }
}

/// The 18-link toy network: 12 road segments (ids 1-9 and 16-18, attributes
/// from the published link table) plus 6 OD connectors (ids 10-15).
///
/// Layout: a mainline 1 -> 10 over links 1..9, a slow bypass 2 -> 11 -> 5
/// over links 16/17 and a slow bypass 6 -> 9 over link 18. Origins 101-103
/// feed nodes 1, 3 and 5; destinations 201-203 leave from nodes 6, 8 and 10.
/// Curb parking is allowed on links 5 and 9.
pub fn toy_network() -> Network {
    const FAST: [f64; 2] = [50.0, 40.0];
    const SLOW: [f64; 2] = [30.0, 20.0];
    let mut links = vec![
        segment(1, 1, 2, 1.0, FAST, [6000.0, 3600.0], [540.0, 240.0]),
        segment(2, 2, 3, 0.5, FAST, [2000.0, 1200.0], [90.0, 40.0]),
        segment(3, 3, 4, 1.0, FAST, [6000.0, 3600.0], [540.0, 240.0]),
        segment(4, 4, 5, 0.5, FAST, [2000.0, 1200.0], [180.0, 80.0]),
        segment(5, 5, 6, 1.0, FAST, [6000.0, 3600.0], [540.0, 240.0]),
        segment(6, 6, 7, 0.5, FAST, [2000.0, 1200.0], [90.0, 40.0]),
        segment(7, 7, 8, 1.0, FAST, [4000.0, 2400.0], [360.0, 160.0]),
        segment(8, 8, 9, 0.5, FAST, [2000.0, 1200.0], [90.0, 40.0]),
        segment(9, 9, 10, 1.0, FAST, [6000.0, 3600.0], [540.0, 240.0]),
        connector(10, 101, 1),
        connector(11, 102, 3),
        connector(12, 103, 5),
        connector(13, 6, 201),
        connector(14, 8, 202),
        connector(15, 10, 203),
        segment(16, 2, 11, 2.0, SLOW, [2000.0, 1200.0], [360.0, 160.0]),
        segment(17, 11, 5, 0.5, SLOW, [2000.0, 1200.0], [90.0, 40.0]),
        segment(18, 6, 9, 2.0, SLOW, [2000.0, 1200.0], [360.0, 160.0]),
    ];
    for l in links.iter_mut().filter(|l| l.id == 5 || l.id == 9) {
        l.allows_parking = true;
        l.curb_capacity = 30.0;
    }
    let od = [(101, 201), (101, 202), (101, 203), (102, 202), (102, 203), (103, 203)]
        .into_iter()
        .map(|(origin, destination)| OdPair {
            origin,
            destination,
        })
        .collect();
    let mut net = Network::new(links, od).expect("toy network is valid");

    let coords: BTreeMap<u32, [f64; 2]> = [
        (1, [0.0, 0.0]),
        (2, [1000.0, 0.0]),
        (3, [1500.0, 0.0]),
        (4, [2500.0, 0.0]),
        (5, [3000.0, 0.0]),
        (6, [4000.0, 0.0]),
        (7, [4500.0, 0.0]),
        (8, [5500.0, 0.0]),
        (9, [6000.0, 0.0]),
        (10, [7000.0, 0.0]),
        (11, [1750.0, 800.0]),
        (101, [-300.0, 0.0]),
        (102, [1500.0, -300.0]),
        (103, [3000.0, 300.0]),
        (201, [4000.0, 300.0]),
        (202, [5500.0, 300.0]),
        (203, [7300.0, 0.0]),
    ]
    .into_iter()
    .collect();
    net.set_coords(coords);
    let bypass = net.link_idx(18).unwrap();
    net.set_link_geometry(
        bypass,
        vec![[4000.0, 0.0], [4000.0, -800.0], [6000.0, -800.0], [6000.0, 0.0]],
    )
    .unwrap();
    net
}

/// Peaked ground-truth demand for any network. Each OD pair gets a base car
/// volume, a peak interval and a truck share; trucks are roughly a tenth of
/// cars.
pub fn peaked_demand(
    num_od: usize,
    intervals: usize,
    car_range: (f64, f64),
    seed: u64,
) -> DemandTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = DemandTensor::zeros(num_od, intervals);
    let width = (intervals as f64 / 4.0).max(1.0);
    for od in 0..num_od {
        let base = rng.gen_range(car_range.0..=car_range.1);
        let peak = rng.gen_range(0.25..=0.55) * intervals as f64;
        let truck_share = rng.gen_range(0.06..=0.12);
        for t in 0..intervals {
            let z = (t as f64 + 0.5 - peak) / width;
            let shape = 0.35 + 0.65 * (-z * z).exp();
            let car = (base * shape).round();
            q.set(crate::VehicleClass::Car, od, t, car);
            q.set(crate::VehicleClass::Truck, od, t, (car * truck_share).round());
        }
    }
    q
}

/// Ground truth used for the toy network experiments.
pub fn toy_demand(intervals: usize, seed: u64) -> DemandTensor {
    peaked_demand(6, intervals, (60.0, 160.0), seed)
}

/// Seeded grid network of `rows x cols` intersections with bidirectional
/// segments, origins on the west edge and destinations on the east edge.
pub fn grid_network(rows: usize, cols: usize, seed: u64) -> Network {
    assert!(rows >= 1 && cols >= 2, "grid needs at least 1x2 nodes");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let node = |r: usize, c: usize| (r * cols + c + 1) as u32;
    let mut links = Vec::new();
    let mut coords = BTreeMap::new();
    let spacing = 500.0;
    for r in 0..rows {
        for c in 0..cols {
            coords.insert(node(r, c), [c as f64 * spacing, r as f64 * spacing]);
        }
    }
    let mut next_id = 1u32;
    let mut add = |links: &mut Vec<Link>, from: u32, to: u32, rng: &mut ChaCha8Rng| {
        let arterial = rng.gen_bool(0.7);
        let (ffs, cap, jam) = if arterial {
            ([50.0, 40.0], [2000.0, 1200.0], [180.0, 80.0])
        } else {
            ([30.0, 20.0], [1200.0, 720.0], [120.0, 50.0])
        };
        let mut l = segment(next_id, from, to, 0.5, ffs, cap, jam);
        if rng.gen_bool(0.3) {
            l.allows_parking = true;
            l.curb_capacity = 10.0;
        }
        links.push(l);
        next_id += 1;
    };
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                add(&mut links, node(r, c), node(r, c + 1), &mut rng);
                add(&mut links, node(r, c + 1), node(r, c), &mut rng);
            }
            if r + 1 < rows {
                add(&mut links, node(r, c), node(r + 1, c), &mut rng);
                add(&mut links, node(r + 1, c), node(r, c), &mut rng);
            }
        }
    }
    let base = (rows * cols) as u32;
    let mut od = Vec::new();
    let mut origins = Vec::new();
    let mut dests = Vec::new();
    for r in 0..rows {
        let o = 1000 + base + r as u32;
        let d = 2000 + base + r as u32;
        links.push(connector(next_id, o, node(r, 0)));
        next_id += 1;
        links.push(connector(next_id, node(r, cols - 1), d));
        next_id += 1;
        coords.insert(o, [-300.0, r as f64 * spacing]);
        coords.insert(d, [(cols - 1) as f64 * spacing + 300.0, r as f64 * spacing]);
        origins.push(o);
        dests.push(d);
    }
    for &o in &origins {
        for &d in &dests {
            od.push(OdPair {
                origin: o,
                destination: d,
            });
        }
    }
    let mut net = Network::new(links, od).expect("grid network is valid");
    net.set_coords(coords);
    net
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::validate_network;
    use crate::VehicleClass;

    #[test]
    fn toy_matches_published_rows() {
        let net = toy_network();
        let l1 = net.link(net.link_idx(1).unwrap());
        assert_eq!(l1.length_km, 1.0);
        assert_eq!(l1.free_flow_speed, [50.0, 40.0]);
        assert_eq!(l1.capacity, [6000.0, 3600.0]);
        assert_eq!(l1.jam_density, [540.0, 240.0]);
        let l7 = net.link(net.link_idx(7).unwrap());
        assert_eq!(l7.capacity, [4000.0, 2400.0]);
        let l18 = net.link(net.link_idx(18).unwrap());
        assert_eq!((l18.length_km, l18.free_flow_speed[1]), (2.0, 20.0));
        assert_eq!(net.links().iter().filter(|l| l.is_connector).count(), 6);
    }

    #[test]
    fn demand_is_seeded_and_trucks_smaller() {
        let a = toy_demand(10, 3);
        assert_eq!(a, toy_demand(10, 3));
        assert_ne!(a, toy_demand(10, 4));
        let car: f64 = a.class_slice(VehicleClass::Car).iter().sum();
        let truck: f64 = a.class_slice(VehicleClass::Truck).iter().sum();
        assert!(car > 5.0 * truck);
    }

    #[test]
    fn grid_is_valid() {
        let net = grid_network(3, 4, 1);
        assert!(validate_network(&net).is_empty());
        assert_eq!(net.num_od(), 9);
    }
}
