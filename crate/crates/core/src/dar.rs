//! Dynamic assignment ratio (DAR) matrices.
//!
//! For each class there are four matrices, one per cumulative curve. Rows are
//! `(link, t2)` flattened as `link * T + t2` and columns are
//! `(path, t1)` flattened as `path * T + t1`. Entry values are the share of
//! path flow `f[path][t1]` that produced an increment on the curve during
//! interval `t2`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path as FsPath;

use crate::dnl::{CumulativeCurveSet, CurveKind, PathFlowTensor};
use crate::network::Network;
use crate::sparse::SparseMatrix;
use crate::{Error, Result, VehicleClass, NUM_CLASSES};

#[derive(Clone, Debug, PartialEq)]
pub struct ClassDar {
    pub arr_moving: SparseMatrix,
    pub arr_parking: SparseMatrix,
    pub dep_moving: SparseMatrix,
    pub dep_parking: SparseMatrix,
    /// `arr_moving + arr_parking`
    pub arrival: SparseMatrix,
    /// `arrival - dep_moving - dep_parking`
    pub net: SparseMatrix,
}

impl ClassDar {
    fn from_parts(parts: [SparseMatrix; 4]) -> Result<Self> {
        let [am, ap, dm, dp] = parts;
        let arrival = am.add_scaled(&ap, 1.0)?;
        let net = arrival.add_scaled(&dm, -1.0)?.add_scaled(&dp, -1.0)?;
        Ok(ClassDar {
            arr_moving: am,
            arr_parking: ap,
            dep_moving: dm,
            dep_parking: dp,
            arrival,
            net,
        })
    }

    pub fn matrix(&self, kind: CurveKind) -> &SparseMatrix {
        match kind {
            CurveKind::ArrivalMoving => &self.arr_moving,
            CurveKind::ArrivalParking => &self.arr_parking,
            CurveKind::DepartureMoving => &self.dep_moving,
            CurveKind::DeparturePark => &self.dep_parking,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DarMatrixSet {
    pub num_links: usize,
    pub intervals: usize,
    pub classes: [ClassDar; NUM_CLASSES],
}

/// Per-link running sum over intervals: `(Hv)[a, t] = sum_{t2 <= t} v[a, t2]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CumulationOperator {
    pub intervals: usize,
}

impl CumulationOperator {
    pub fn new(intervals: usize) -> Self {
        CumulationOperator { intervals }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = v.to_vec();
        for block in out.chunks_mut(self.intervals) {
            for t in 1..block.len() {
                block[t] += block[t - 1];
            }
        }
        out
    }

    pub fn apply_transpose(&self, v: &[f64]) -> Vec<f64> {
        let mut out = v.to_vec();
        for block in out.chunks_mut(self.intervals) {
            for t in (0..block.len().saturating_sub(1)).rev() {
                block[t] += block[t + 1];
            }
        }
        out
    }
}

/// Builds the DAR matrices from tagged curves and the path flows that
/// produced them.
pub fn extract_dar(curves: &CumulativeCurveSet, f: &PathFlowTensor) -> Result<DarMatrixSet> {
    let t_n = curves.horizon_intervals();
    if f.intervals() != t_n {
        return Err(Error::Dimension(format!(
            "path flows cover {} intervals, curves {}",
            f.intervals(),
            t_n
        )));
    }
    let n_links = curves.num_links();
    let nrows = n_links * t_n;
    let classes = VehicleClass::ALL.map(|class| -> Result<ClassDar> {
        let fc = f.class_slice(class);
        let ncols = fc.len();
        let parts = CurveKind::ALL.map(|kind| -> Result<SparseMatrix> {
            let mut trip = Vec::new();
            for link in 0..n_links {
                for (step, tr) in curves.increments(link, class, kind) {
                    let t2 = curves.interval_of(step);
                    if t2 >= t_n {
                        continue;
                    }
                    let col = tr.path as usize * t_n + tr.depart_interval as usize;
                    let denom = fc.get(col).copied().unwrap_or(0.0);
                    if denom <= 0.0 {
                        return Err(Error::Invariant(format!(
                            "{class} increment on link {link} tagged with path {} interval {} \
                             whose flow is zero",
                            tr.path, tr.depart_interval
                        )));
                    }
                    trip.push((link * t_n + t2, col, tr.size / denom));
                }
            }
            SparseMatrix::from_triplets(nrows, ncols, trip)
        });
        let [a, b, c, d] = parts;
        ClassDar::from_parts([a?, b?, c?, d?])
    });
    let [car, truck] = classes;
    Ok(DarMatrixSet {
        num_links: n_links,
        intervals: t_n,
        classes: [car?, truck?],
    })
}

impl DarMatrixSet {
    pub fn class(&self, class: VehicleClass) -> &ClassDar {
        &self.classes[class.index()]
    }

    fn check_flow(&self, f: &PathFlowTensor) -> Result<()> {
        for class in VehicleClass::ALL {
            let n = f.class_slice(class).len();
            let expect = self.class(class).arrival.ncols();
            if n != expect || f.intervals() != self.intervals {
                return Err(Error::Dimension(format!(
                    "{class} path flow has {n} cells, DAR expects {expect}"
                )));
            }
        }
        Ok(())
    }

    /// Copies columns absent here (zero flow at extraction) from an earlier
    /// set with the same shape.
    pub fn fill_missing_columns_from(&mut self, prev: &DarMatrixSet) -> Result<()> {
        if prev.num_links != self.num_links || prev.intervals != self.intervals {
            return Err(Error::Dimension("previous DAR set has a different shape".into()));
        }
        for c in 0..NUM_CLASSES {
            let cur = &self.classes[c];
            let old = &prev.classes[c];
            if old.arrival.ncols() != cur.arrival.ncols() {
                return Err(Error::Dimension("previous DAR set has a different path count".into()));
            }
            let present = cur.arrival.column_mask();
            let old_present = old.arrival.column_mask();
            if !present.iter().zip(&old_present).any(|(p, o)| !p && *o) {
                continue;
            }
            let merge = |kind: CurveKind| -> Result<SparseMatrix> {
                let m = cur.matrix(kind);
                let trip = m
                    .triplets()
                    .chain(old.matrix(kind).triplets().filter(|&(_, col, _)| !present[col]))
                    .collect();
                SparseMatrix::from_triplets(m.nrows(), m.ncols(), trip)
            };
            let parts = [
                merge(CurveKind::ArrivalMoving)?,
                merge(CurveKind::ArrivalParking)?,
                merge(CurveKind::DepartureMoving)?,
                merge(CurveKind::DeparturePark)?,
            ];
            self.classes[c] = ClassDar::from_parts(parts)?;
        }
        Ok(())
    }

    /// Writes `class,kind,link,t2,path,t1,value` rows with link ids.
    pub fn write_csv(&self, net: &Network, path: &FsPath) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "class,kind,link,t2,path,t1,value").map_err(io)?;
        let t_n = self.intervals;
        for class in VehicleClass::ALL {
            for (kind, name) in CurveKind::ALL.into_iter().zip(["Am", "Ap", "Dm", "Dp"]) {
                for (r, c, v) in self.class(class).matrix(kind).triplets() {
                    writeln!(
                        w,
                        "{class},{name},{},{},{},{},{v}",
                        net.link(r / t_n).id,
                        r % t_n,
                        c / t_n,
                        c % t_n
                    )
                    .map_err(io)?;
                }
            }
        }
        w.flush().map_err(io)
    }
}

/// `x = (rho_arr^m + rho_arr^p) f` per class, indexed `link * T + t`.
pub fn reconstruct_flow(dar: &DarMatrixSet, f: &PathFlowTensor) -> Result<[Vec<f64>; NUM_CLASSES]> {
    dar.check_flow(f)?;
    let [a, b] = VehicleClass::ALL.map(|c| dar.class(c).arrival.mul_vec(f.class_slice(c)));
    Ok([a?, b?])
}

/// `k * l = H (rho_arr - rho_dep) f` per class, indexed `link * T + t`.
pub fn reconstruct_density(dar: &DarMatrixSet, f: &PathFlowTensor) -> Result<[Vec<f64>; NUM_CLASSES]> {
    dar.check_flow(f)?;
    let h = CumulationOperator::new(dar.intervals);
    let [a, b] = VehicleClass::ALL.map(|c| dar.class(c).net.mul_vec(f.class_slice(c)).map(|v| h.apply(&v)));
    Ok([a?, b?])
}
