//! Observation data: detection matching, density snapshots, noise and the
//! density consistency filters.

mod matching;

pub use matching::{match_detections, point_polyline_distance, point_segment_distance, MatchStatus};

use std::fs::File;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::estimator::{GroupSpec, ObservationSet, Stream};
use crate::network::Network;
use crate::{Error, Result, VehicleClass, NUM_CLASSES};

/// Default matching buffer, metres.
pub const DEFAULT_BUFFER_M: f64 = 15.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectionClass {
    Car,
    Truck,
    Other,
}

impl DetectionClass {
    pub fn vehicle_class(self) -> Option<VehicleClass> {
        match self {
            DetectionClass::Car => Some(VehicleClass::Car),
            DetectionClass::Truck => Some(VehicleClass::Truck),
            DetectionClass::Other => None,
        }
    }
}

impl From<VehicleClass> for DetectionClass {
    fn from(c: VehicleClass) -> Self {
        match c {
            VehicleClass::Car => DetectionClass::Car,
            VehicleClass::Truck => DetectionClass::Truck,
        }
    }
}

/// A detected vehicle centroid in planar metres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub id: u64,
    pub x: f64,
    pub y: f64,
    pub class: DetectionClass,
    pub snapshot_id: u32,
    pub interval: usize,
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, rec) in csv::Reader::from_reader(file).deserialize::<Detection>().enumerate() {
        let d = rec.map_err(|e| Error::parse(format!("{}:{}", path.display(), i + 2), e))?;
        if !(d.x.is_finite() && d.y.is_finite()) {
            return Err(Error::parse(format!("{}:{}", path.display(), i + 2), "non-finite coordinate"));
        }
        out.push(d);
    }
    Ok(out)
}

pub fn write_detections(dets: &[Detection], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for d in dets {
        w.serialize(d).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Matched vehicle counts per link and class at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct DensitySnapshot {
    pub snapshot_id: u32,
    pub interval: usize,
    /// `counts[class][link]`
    pub counts: [Vec<u32>; NUM_CLASSES],
    pub lengths_km: Vec<f64>,
}

impl DensitySnapshot {
    pub fn empty(net: &Network, snapshot_id: u32, interval: usize) -> Self {
        DensitySnapshot {
            snapshot_id,
            interval,
            counts: std::array::from_fn(|_| vec![0; net.num_links()]),
            lengths_km: net.links().iter().map(|l| l.length_km).collect(),
        }
    }

    /// Counts matched detections of one snapshot.
    pub fn from_matches(
        net: &Network,
        dets: &[Detection],
        matches: &[MatchStatus],
        snapshot_id: u32,
        interval: usize,
    ) -> Result<Self> {
        if dets.len() != matches.len() {
            return Err(Error::Dimension("one match status per detection expected".into()));
        }
        let mut s = DensitySnapshot::empty(net, snapshot_id, interval);
        for (d, m) in dets.iter().zip(matches) {
            if d.snapshot_id != snapshot_id {
                continue;
            }
            if let (Some(class), Some(link)) = (d.class.vehicle_class(), m.link()) {
                s.counts[class.index()][link] += 1;
            }
        }
        Ok(s)
    }

    pub fn total(&self, link: usize) -> u32 {
        self.counts.iter().map(|c| c[link]).sum()
    }
}

/// Which density rows a snapshot contributes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DensitySpec {
    pub links: Vec<usize>,
    /// One row per link summing both classes instead of one row per class.
    pub cross_class: bool,
}

/// Appends the snapshot's density rows (matched counts) to `obs`.
pub fn build_density_observation(obs: &mut ObservationSet, snap: &DensitySnapshot, spec: &DensitySpec) -> Result<()> {
    if snap.interval >= obs.intervals {
        return Err(Error::InvalidInput(format!(
            "snapshot interval {} outside horizon of {}",
            snap.interval, obs.intervals
        )));
    }
    for &l in &spec.links {
        if l >= snap.lengths_km.len() {
            return Err(Error::InvalidInput(format!("snapshot has no link index {l}")));
        }
        if spec.cross_class {
            obs.push(Stream::Density, &GroupSpec::all_classes(l, snap.interval), snap.total(l) as f64)?;
        } else {
            for c in VehicleClass::ALL {
                obs.push(
                    Stream::Density,
                    &GroupSpec::cell(c, l, snap.interval),
                    snap.counts[c.index()][l] as f64,
                )?;
            }
        }
    }
    Ok(())
}

/// Multiplies each value by an independent `Uniform(1 - level, 1 + level)`.
pub fn inject_noise(values: &[f64], level: f64, seed: u64) -> Result<Vec<f64>> {
    if !(level >= 0.0 && level.is_finite()) {
        return Err(Error::InvalidInput(format!("noise level must be >= 0, got {level}")));
    }
    if level == 0.0 {
        return Ok(values.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(values
        .iter()
        .map(|v| v * rng.gen_range(1.0 - level..=1.0 + level))
        .collect())
}

/// Links whose total matched counts in the two snapshots differ by at most
/// `threshold` vehicles.
pub fn select_consistent_links(a: &DensitySnapshot, b: &DensitySnapshot, threshold: f64) -> Result<Vec<usize>> {
    if a.lengths_km.len() != b.lengths_km.len() {
        return Err(Error::Dimension("snapshots cover different link sets".into()));
    }
    Ok((0..a.lengths_km.len())
        .filter(|&l| (a.total(l) as f64 - b.total(l) as f64).abs() <= threshold)
        .collect())
}

/// Keeps link `i` when, for every class, a nonzero observation is at least
/// a third of the estimate and a zero observation faces an estimate of at
/// most `zero_cap`.
pub fn two_stage_filter(
    estimated: &[[f64; NUM_CLASSES]],
    observed: &[[f64; NUM_CLASSES]],
    zero_cap: f64,
) -> Result<Vec<usize>> {
    if estimated.len() != observed.len() {
        return Err(Error::Dimension("estimated and observed densities differ in length".into()));
    }
    Ok(estimated
        .iter()
        .zip(observed)
        .enumerate()
        .filter(|(_, (est, obs))| {
            est.iter().zip(obs.iter()).all(|(&e, &o)| if o > 0.0 { e <= 3.0 * o } else { e <= zero_cap })
        })
        .map(|(i, _)| i)
        .collect())
}

/// Places `round(remaining)` detections per link and class uniformly along
/// each road segment with a small lateral offset, plus `clutter` off-road
/// and `other`-class points.
pub struct SyntheticDetections<'a> {
    pub net: &'a Network,
    pub snapshot_id: u32,
    pub interval: usize,
    pub lateral_m: f64,
    pub clutter: usize,
}

impl SyntheticDetections<'_> {
    /// `remaining[class][link]` vehicles on each link.
    pub fn generate(&self, remaining: &[Vec<f64>; NUM_CLASSES], seed: u64) -> Result<Vec<Detection>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        let mut id = self.snapshot_id as u64 * 1_000_000;
        for l in self.net.segment_indices() {
            let line = self.net.link_polyline(l)?;
            let seg_len: Vec<f64> = line
                .windows(2)
                .map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt())
                .collect();
            let total: f64 = seg_len.iter().sum();
            for class in VehicleClass::ALL {
                let n = remaining[class.index()][l].max(0.0).round() as usize;
                for _ in 0..n {
                    let mut s = rng.gen_range(0.02..0.98) * total;
                    let mut k = 0;
                    while k + 1 < seg_len.len() && s > seg_len[k] {
                        s -= seg_len[k];
                        k += 1;
                    }
                    let (a, b) = (line[k], line[k + 1]);
                    let u = if seg_len[k] > 0.0 { s / seg_len[k] } else { 0.0 };
                    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
                    let norm = seg_len[k].max(f64::MIN_POSITIVE);
                    let off = rng.gen_range(-self.lateral_m..=self.lateral_m);
                    out.push(Detection {
                        id,
                        x: a[0] + u * dx - off * dy / norm,
                        y: a[1] + u * dy + off * dx / norm,
                        class: class.into(),
                        snapshot_id: self.snapshot_id,
                        interval: self.interval,
                    });
                    id += 1;
                }
            }
        }
        let bounds = self.net.coords().values().fold(
            [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY],
            |b, p| [b[0].min(p[0]), b[1].min(p[1]), b[2].max(p[0]), b[3].max(p[1])],
        );
        for i in 0..self.clutter {
            out.push(Detection {
                id,
                x: rng.gen_range(bounds[0] - 500.0..=bounds[2] + 500.0),
                y: rng.gen_range(bounds[1] - 500.0..=bounds[3] + 500.0),
                class: if i % 2 == 0 { DetectionClass::Other } else { DetectionClass::Car },
                snapshot_id: self.snapshot_id,
                interval: self.interval,
            });
            id += 1;
        }
        Ok(out)
    }
}
