use serde::{Deserialize, Serialize};

use super::{DemandTensor, ObservationSet, Stream};
use crate::dar::{CumulationOperator, DarMatrixSet};
use crate::dnl::{smooth, smooth_transpose, LinkStateTensor, RouteProportions};
use crate::network::PathSet;
use crate::{Error, Result, VehicleClass, NUM_CLASSES};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub count: f64,
    pub time: f64,
    pub density: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            count: 1.0,
            time: 1.0,
            density: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(count: f64, time: f64, density: f64) -> Result<Self> {
        let w = LossWeights { count, time, density };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.count, self.time, self.density];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("loss weights must be finite and >= 0".into()));
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(Error::Config("at least one loss weight must be positive".into()));
        }
        Ok(())
    }

    /// `w1 = 1`, `w2 = (mean count / mean time)^2`,
    /// `w3 = (mean count / mean density)^2`, from the observed values.
    /// Streams without rows get weight 0; without counts all weights are 1.
    pub fn balanced(obs: &ObservationSet) -> Self {
        let mean = |s: Stream| {
            let st = obs.stream(s);
            let (sum, n) = st
                .values
                .iter()
                .zip(&st.valid)
                .filter(|(_, v)| **v)
                .fold((0.0, 0usize), |(a, n), (x, _)| (a + x.abs(), n + 1));
            (n > 0).then(|| sum / n as f64)
        };
        let c = mean(Stream::Count);
        let scale = |m: Option<f64>| match (c, m) {
            (_, None) => 0.0,
            (Some(c), Some(m)) if m > 0.0 && c > 0.0 => (c / m).powi(2),
            _ => 1.0,
        };
        LossWeights {
            count: if c.is_some() { 1.0 } else { 0.0 },
            time: scale(mean(Stream::Time)),
            density: scale(mean(Stream::Density)),
        }
        .or_unit()
    }

    fn or_unit(self) -> Self {
        if self.validate().is_ok() {
            self
        } else {
            LossWeights::default()
        }
    }
}

/// Weighted loss terms; `total` is their sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub count: f64,
    pub time: f64,
    pub density: f64,
}

/// Modelled flow, travel time and density, each `[class][link * T + t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelStates {
    pub flow: [Vec<f64>; NUM_CLASSES],
    pub travel_time: [Vec<f64>; NUM_CLASSES],
    pub density: [Vec<f64>; NUM_CLASSES],
}

impl From<&LinkStateTensor> for ModelStates {
    fn from(s: &LinkStateTensor) -> Self {
        ModelStates {
            flow: s.flow.clone(),
            travel_time: s.travel_time.clone(),
            density: s.density.clone(),
        }
    }
}

impl ModelStates {
    fn stream(&self, s: Stream) -> &[Vec<f64>; NUM_CLASSES] {
        match s {
            Stream::Count => &self.flow,
            Stream::Time => &self.travel_time,
            Stream::Density => &self.density,
        }
    }
}

fn weight(w: &LossWeights, s: Stream) -> f64 {
    match s {
        Stream::Count => w.count,
        Stream::Time => w.time,
        Stream::Density => w.density,
    }
}

fn check_shapes(states: &ModelStates, obs: &ObservationSet) -> Result<()> {
    let n = obs.num_links * obs.intervals;
    for s in Stream::ALL {
        let st = states.stream(s);
        if st.iter().any(|v| v.len() != n) {
            return Err(Error::Dimension(format!(
                "modelled {} has the wrong shape for the observations",
                s.as_str()
            )));
        }
        if st.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("modelled {}", s.as_str())));
        }
        let o = obs.stream(s);
        if o.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("observed {}", s.as_str())));
        }
    }
    Ok(())
}

pub fn compute_loss_states(states: &ModelStates, obs: &ObservationSet, w: &LossWeights) -> Result<LossBreakdown> {
    check_shapes(states, obs)?;
    let term = |s: Stream| -> f64 {
        let wt = weight(w, s);
        if wt == 0.0 {
            return 0.0;
        }
        wt * obs.stream(s).residuals(states.stream(s)).iter().map(|r| r * r).sum::<f64>()
    };
    let (count, time, density) = (term(Stream::Count), term(Stream::Time), term(Stream::Density));
    Ok(LossBreakdown {
        total: count + time + density,
        count,
        time,
        density,
    })
}

/// `w1 |x^o - L x|^2 + w2 |h^o - M h|^2 + w3 |k^o - I k|^2` on loader output.
pub fn compute_loss(states: &LinkStateTensor, obs: &ObservationSet, w: &LossWeights) -> Result<LossBreakdown> {
    compute_loss_states(&ModelStates::from(states), obs, w)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TravelTimeGradient {
    #[default]
    On,
    Off,
}

/// The loader linearized around one forward pass: DAR matrices, route
/// proportions and, for the time term, `dh/dx` per cell.
#[derive(Clone, Debug)]
pub struct Linearization {
    pub p: RouteProportions,
    pub dar: DarMatrixSet,
    pub num_od: usize,
    /// OD index of each path, per class.
    pub path_od: [Vec<usize>; NUM_CLASSES],
    pub delta: usize,
    /// Inflow and travel time at the linearization point.
    pub base_flow: [Vec<f64>; NUM_CLASSES],
    pub base_time: [Vec<f64>; NUM_CLASSES],
    /// `None` when the time term is held constant.
    pub dhdx: Option<[Vec<f64>; NUM_CLASSES]>,
}

impl Linearization {
    pub fn new(
        paths: &PathSet,
        p: RouteProportions,
        dar: DarMatrixSet,
        states: &LinkStateTensor,
        num_od: usize,
        delta: usize,
        dhdx: Option<[Vec<f64>; NUM_CLASSES]>,
    ) -> Result<Self> {
        if states.intervals != dar.intervals || states.num_links != dar.num_links {
            return Err(Error::Dimension("link states and DAR matrices differ in shape".into()));
        }
        if p.intervals() != dar.intervals || !(0..NUM_CLASSES).all(|c| {
            p.class_slice(VehicleClass::ALL[c]).len() == dar.classes[c].arrival.ncols()
        }) {
            return Err(Error::Dimension("route proportions and DAR matrices differ in shape".into()));
        }
        Ok(Linearization {
            p,
            dar,
            num_od,
            path_od: std::array::from_fn(|c| paths.classes[c].paths.iter().map(|k| k.od).collect()),
            delta,
            base_flow: states.flow.clone(),
            base_time: states.travel_time.clone(),
            dhdx,
        })
    }

    fn intervals(&self) -> usize {
        self.dar.intervals
    }

    fn check_demand(&self, q: &DemandTensor) -> Result<()> {
        if q.num_od() != self.num_od || q.intervals() != self.intervals() {
            return Err(Error::Dimension("demand does not match the linearization".into()));
        }
        Ok(())
    }

    /// `f = p * q` per class.
    pub fn path_flow(&self, q: &DemandTensor) -> Result<[Vec<f64>; NUM_CLASSES]> {
        self.check_demand(q)?;
        let t_n = self.intervals();
        Ok(std::array::from_fn(|c| {
            let class = VehicleClass::ALL[c];
            let p = self.p.class_slice(class);
            let qc = q.class_slice(class);
            p.iter()
                .enumerate()
                .map(|(i, &pk)| pk * qc[self.path_od[c][i / t_n] * t_n + i % t_n])
                .collect()
        }))
    }

    /// Linear predictions of flow, travel time and density at `q`.
    pub fn model_at(&self, q: &DemandTensor) -> Result<ModelStates> {
        let f = self.path_flow(q)?;
        let t_n = self.intervals();
        let h = CumulationOperator::new(t_n);
        let mut flow: [Vec<f64>; NUM_CLASSES] = Default::default();
        let mut density: [Vec<f64>; NUM_CLASSES] = Default::default();
        let mut travel_time: [Vec<f64>; NUM_CLASSES] = Default::default();
        for c in 0..NUM_CLASSES {
            let d = &self.dar.classes[c];
            flow[c] = d.arrival.mul_vec(&f[c])?;
            density[c] = smooth(&h.apply(&d.net.mul_vec(&f[c])?), t_n, self.delta);
            travel_time[c] = match &self.dhdx {
                Some(j) => self.base_time[c]
                    .iter()
                    .zip(&j[c])
                    .zip(flow[c].iter().zip(&self.base_flow[c]))
                    .map(|((h0, s), (x, x0))| h0 + s * (x - x0))
                    .collect(),
                None => self.base_time[c].clone(),
            };
        }
        Ok(ModelStates {
            flow,
            travel_time,
            density,
        })
    }

    /// Gradient with respect to `q` given modelled states (loader output or
    /// linear predictions).
    pub fn gradient_at(&self, states: &ModelStates, obs: &ObservationSet, w: &LossWeights) -> Result<DemandTensor> {
        check_shapes(states, obs)?;
        if obs.intervals != self.intervals() || obs.num_links != self.dar.num_links {
            return Err(Error::Dimension("observations and DAR matrices differ in shape".into()));
        }
        let t_n = self.intervals();
        let h = CumulationOperator::new(t_n);
        let adjoint = |s: Stream| -> Option<[Vec<f64>; NUM_CLASSES]> {
            let wt = weight(w, s);
            let o = obs.stream(s);
            if wt == 0.0 || o.is_empty() {
                return None;
            }
            let r: Vec<f64> = o.residuals(states.stream(s)).iter().map(|r| -2.0 * wt * r).collect();
            Some(o.op.apply_transpose(&r))
        };
        let adj_x = adjoint(Stream::Count);
        let adj_h = adjoint(Stream::Time);
        let adj_k = adjoint(Stream::Density);
        let mut g = DemandTensor::zeros(self.num_od, t_n);
        for c in 0..NUM_CLASSES {
            let class = VehicleClass::ALL[c];
            let d = &self.dar.classes[c];
            let mut on_flow = adj_x.as_ref().map(|a| a[c].clone());
            if let (Some(a), Some(j)) = (&adj_h, &self.dhdx) {
                let t: Vec<f64> = a[c].iter().zip(&j[c]).map(|(a, s)| a * s).collect();
                match &mut on_flow {
                    Some(v) => v.iter_mut().zip(&t).for_each(|(v, t)| *v += t),
                    None => on_flow = Some(t),
                }
            }
            let mut gf = vec![0.0; d.arrival.ncols()];
            if let Some(v) = on_flow {
                gf = d.arrival.mul_transpose_vec(&v)?;
            }
            if let Some(a) = &adj_k {
                let back = h.apply_transpose(&smooth_transpose(&a[c], t_n, self.delta));
                for (g, v) in gf.iter_mut().zip(d.net.mul_transpose_vec(&back)?) {
                    *g += v;
                }
            }
            let p = self.p.class_slice(class);
            let gq = g.class_slice_mut(class);
            for (i, (gfi, pi)) in gf.iter().zip(p).enumerate() {
                gq[self.path_od[c][i / t_n] * t_n + i % t_n] += pi * gfi;
            }
        }
        Ok(g)
    }
}

/// Gradient of the loss with respect to demand, with residuals taken from
/// the loader states of the forward pass that produced `lin`.
pub fn compute_gradient(
    lin: &Linearization,
    states: &LinkStateTensor,
    obs: &ObservationSet,
    w: &LossWeights,
) -> Result<DemandTensor> {
    lin.gradient_at(&ModelStates::from(states), obs, w)
}

/// Loss of the linearized model at `q`.
pub fn linearized_loss(lin: &Linearization, q: &DemandTensor, obs: &ObservationSet, w: &LossWeights) -> Result<LossBreakdown> {
    compute_loss_states(&lin.model_at(q)?, obs, w)
}

/// Exact gradient of [`linearized_loss`] at `q`.
pub fn linearized_gradient(lin: &Linearization, q: &DemandTensor, obs: &ObservationSet, w: &LossWeights) -> Result<DemandTensor> {
    lin.gradient_at(&lin.model_at(q)?, obs, w)
}
