use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::network::Network;
use crate::{Error, Result, VehicleClass, NUM_CLASSES};

/// Time-dependent OD demand, `q[class][od][interval]` in vehicles.
#[derive(Clone, Debug, PartialEq)]
pub struct DemandTensor {
    num_od: usize,
    intervals: usize,
    values: [Vec<f64>; NUM_CLASSES],
}

impl DemandTensor {
    pub fn zeros(num_od: usize, intervals: usize) -> Self {
        DemandTensor {
            num_od,
            intervals,
            values: std::array::from_fn(|_| vec![0.0; num_od * intervals]),
        }
    }

    pub fn from_values(num_od: usize, intervals: usize, values: [Vec<f64>; NUM_CLASSES]) -> Result<Self> {
        if values.iter().any(|v| v.len() != num_od * intervals) {
            return Err(Error::Dimension(format!(
                "demand values must have {} entries per class",
                num_od * intervals
            )));
        }
        Ok(DemandTensor {
            num_od,
            intervals,
            values,
        })
    }

    pub fn num_od(&self) -> usize {
        self.num_od
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    #[inline]
    pub fn get(&self, class: VehicleClass, od: usize, t: usize) -> f64 {
        self.values[class.index()][od * self.intervals + t]
    }

    #[inline]
    pub fn set(&mut self, class: VehicleClass, od: usize, t: usize, v: f64) {
        self.values[class.index()][od * self.intervals + t] = v;
    }

    pub fn class_slice(&self, class: VehicleClass) -> &[f64] {
        &self.values[class.index()]
    }

    pub fn class_slice_mut(&mut self, class: VehicleClass) -> &mut [f64] {
        &mut self.values[class.index()]
    }

    /// Checks non-negativity and finiteness.
    pub fn check(&self) -> Result<()> {
        for v in self.values.iter().flatten() {
            if !v.is_finite() {
                return Err(Error::NonFinite("demand".into()));
            }
            if *v < 0.0 {
                return Err(Error::InvalidInput(format!("negative demand {v}")));
            }
        }
        Ok(())
    }

    pub fn project_nonnegative(&mut self) {
        for v in self.values.iter_mut().flatten() {
            *v = v.max(0.0);
        }
    }

    /// Mean absolute difference per class.
    pub fn mae(&self, other: &DemandTensor) -> [f64; NUM_CLASSES] {
        std::array::from_fn(|c| {
            let a = &self.values[c];
            let b = &other.values[c];
            a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len().max(1) as f64
        })
    }

    pub fn write_csv(&self, net: &Network, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        for c in VehicleClass::ALL {
            for (od, pair) in net.od_pairs().iter().enumerate().take(self.num_od) {
                for t in 0..self.intervals {
                    w.serialize(EstimateRow {
                        class: c,
                        origin: pair.origin,
                        destination: pair.destination,
                        interval: t,
                        demand: self.get(c, od, t),
                    })
                    .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
                }
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(net: &Network, intervals: usize, path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let mut q = DemandTensor::zeros(net.num_od(), intervals);
        for (i, row) in rdr.deserialize::<EstimateRow>().enumerate() {
            let loc = format!("{}:{}", path.display(), i + 2);
            let row = row.map_err(|e| Error::parse(&loc, e))?;
            let od = net
                .od_pairs()
                .iter()
                .position(|p| p.origin == row.origin && p.destination == row.destination)
                .ok_or_else(|| Error::parse(&loc, "unknown OD pair"))?;
            if row.interval >= intervals {
                return Err(Error::parse(&loc, "interval out of horizon"));
            }
            q.set(row.class, od, row.interval, row.demand);
        }
        q.check()?;
        Ok(q)
    }
}

#[derive(Serialize, Deserialize)]
struct EstimateRow {
    class: VehicleClass,
    origin: u32,
    destination: u32,
    interval: usize,
    demand: f64,
}
