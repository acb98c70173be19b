use std::fs::File;
use std::path::Path;
use std::rc::Rc;

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{compute_gradient, compute_loss, linearized_loss, Linearization, LossBreakdown, LossWeights, TravelTimeGradient};
use super::{DemandTensor, ObservationSet};
use crate::dar::{extract_dar, DarMatrixSet};
use crate::dnl::{
    assign_path_flows, free_flow_costs, route_choice, run_dnl, travel_time_sensitivity, DnlConfig, DnlOutput,
    PathFlowTensor, RouteProportions,
};
use crate::network::{Network, PathSet};
use crate::{Error, Result, VehicleClass, NUM_CLASSES};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Projected Adam.
    Adam,
    /// Projected gradient step moving the largest coordinate by at most
    /// `learning_rate` vehicles, then an exact line search on the linearized
    /// loss. The move cap halves when the actual loss reduction falls below
    /// a quarter of the linearized prediction and doubles, up to
    /// `learning_rate`, when it beats three quarters of it.
    #[default]
    #[serde(alias = "fixed_step")]
    LineSearch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    /// Largest per-coordinate move per class (car, truck) in vehicles per
    /// epoch. Adam works with values around a twentieth of the line-search
    /// defaults.
    pub learning_rate: [f64; NUM_CLASSES],
    /// Step size at epoch `k` is `learning_rate / (1 + lr_decay * k)`.
    pub lr_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Upper bound of the uniform initial demand per class.
    pub init_scale: [f64; NUM_CLASSES],
    pub init_seed: u64,
    pub tolerance: f64,
    /// Window, in epochs, over which the relative loss change is measured.
    pub patience: usize,
    pub travel_time_gradient: TravelTimeGradient,
    pub dnl_seed: u64,
    pub divergence_threshold: f64,
    /// Line search only: a trial iterate is kept when its loss is no higher
    /// than the loss recorded this many epochs earlier; otherwise the solver
    /// returns to its best iterate with a smaller step. 0 keeps every step.
    pub acceptance_window: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            epochs: 100,
            optimizer: OptimizerKind::LineSearch,
            learning_rate: [100.0, 10.0],
            lr_decay: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            init_scale: [200.0, 20.0],
            init_seed: 1,
            tolerance: 1e-4,
            patience: 5,
            travel_time_gradient: TravelTimeGradient::On,
            dnl_seed: 0,
            divergence_threshold: 1e12,
            acceptance_window: 0,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.learning_rate.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(self.lr_decay >= 0.0 && self.lr_decay.is_finite()) {
            return Err(Error::Config("lr_decay must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if self.init_scale.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("init scale must be >= 0".into()));
        }
        if !(self.tolerance >= 0.0) || self.patience == 0 {
            return Err(Error::Config("tolerance must be >= 0 and patience >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub epoch: usize,
    pub loss: f64,
    pub loss_count: f64,
    pub loss_time: f64,
    pub loss_density: f64,
    pub grad_norm: f64,
}

/// Per-iteration losses of a solver run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    pub records: Vec<TraceRecord>,
    /// Loader runs spent by the solver.
    pub dnl_evaluations: usize,
}

impl ConvergenceTrace {
    pub fn push(&mut self, epoch: usize, loss: &LossBreakdown, grad_norm: f64) {
        self.records.push(TraceRecord {
            epoch,
            loss: loss.total,
            loss_count: loss.count,
            loss_time: loss.time,
            loss_density: loss.density,
            grad_norm,
        });
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    /// `L_k / L_0`; a zero initial loss maps every entry to 1 or 0.
    pub fn normalized(&self) -> Vec<f64> {
        let l = self.losses();
        match l.first() {
            Some(&l0) if l0 > 0.0 => l.iter().map(|v| v / l0).collect(),
            Some(_) => l.iter().map(|v| if *v > 0.0 { f64::INFINITY } else { 1.0 }).collect(),
            None => Vec::new(),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        for r in &self.records {
            w.serialize(r).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let records = csv::Reader::from_reader(file)
            .deserialize()
            .collect::<std::result::Result<Vec<TraceRecord>, _>>()
            .map_err(|e| Error::parse(path.display().to_string(), e))?;
        Ok(ConvergenceTrace {
            records,
            dnl_evaluations: 0,
        })
    }
}

/// Route proportions from free-flow path costs, shared by every epoch.
pub fn default_route_proportions(paths: &PathSet, dnl_cfg: &DnlConfig) -> Result<RouteProportions> {
    route_choice(paths, &free_flow_costs(paths, dnl_cfg.horizon_intervals), dnl_cfg.logit_scale)
}

/// `q ~ Uniform(0, s0)` per cell.
pub fn random_demand(num_od: usize, intervals: usize, scale: [f64; NUM_CLASSES], seed: u64) -> DemandTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = DemandTensor::zeros(num_od, intervals);
    for c in VehicleClass::ALL {
        let s = scale[c.index()];
        for v in q.class_slice_mut(c) {
            *v = if s > 0.0 { rng.gen_range(0.0..s) } else { 0.0 };
        }
    }
    q
}

/// One forward pass: path flows, loader run, loss and linearization.
pub struct ForwardPass {
    pub f: PathFlowTensor,
    pub out: DnlOutput,
    pub loss: LossBreakdown,
    pub lin: Linearization,
}

#[allow(clippy::too_many_arguments)]
pub fn forward_pass(
    net: &Network,
    paths: &PathSet,
    p: &RouteProportions,
    q: &DemandTensor,
    obs: &ObservationSet,
    w: &LossWeights,
    dnl_cfg: &DnlConfig,
    mode: TravelTimeGradient,
    seed: u64,
    previous: Option<&DarMatrixSet>,
) -> Result<ForwardPass> {
    let f = assign_path_flows(q, p, paths)?;
    let out = run_dnl(net, paths, &f, dnl_cfg, seed)?;
    let loss = compute_loss(&out.states, obs, w)?;
    let mut dar = extract_dar(&out.curves, &f)?;
    if let Some(prev) = previous {
        dar.fill_missing_columns_from(prev)?;
    }
    let dhdx = match mode {
        TravelTimeGradient::On => Some(travel_time_sensitivity(net, &out.curves, &out.states, dnl_cfg)),
        TravelTimeGradient::Off => None,
    };
    let lin = Linearization::new(paths, p.clone(), dar, &out.states, q.num_od(), dnl_cfg.density_smoothing, dhdx)?;
    Ok(ForwardPass { f, out, loss, lin })
}

fn norm(g: &DemandTensor) -> f64 {
    VehicleClass::ALL
        .iter()
        .flat_map(|&c| g.class_slice(c).iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

struct Adam {
    m: [Vec<f64>; NUM_CLASSES],
    v: [Vec<f64>; NUM_CLASSES],
    t: i32,
}

/// Estimates demand starting from `Uniform(0, init_scale)`.
pub fn solve_dode(
    net: &Network,
    paths: &PathSet,
    obs: &ObservationSet,
    w: &LossWeights,
    est_cfg: &EstimatorConfig,
    dnl_cfg: &DnlConfig,
) -> Result<(DemandTensor, ConvergenceTrace)> {
    let q0 = random_demand(net.num_od(), dnl_cfg.horizon_intervals, est_cfg.init_scale, est_cfg.init_seed);
    solve_dode_from(net, paths, obs, w, est_cfg, dnl_cfg, q0)
}

/// Estimates demand from a given starting point. Returns the evaluated
/// iterate with the lowest loss.
pub fn solve_dode_from(
    net: &Network,
    paths: &PathSet,
    obs: &ObservationSet,
    w: &LossWeights,
    est_cfg: &EstimatorConfig,
    dnl_cfg: &DnlConfig,
    mut q: DemandTensor,
) -> Result<(DemandTensor, ConvergenceTrace)> {
    est_cfg.validate()?;
    dnl_cfg.validate()?;
    w.validate()?;
    if obs.is_empty() {
        return Err(Error::InvalidInput("no valid observations".into()));
    }
    if obs.num_links != net.num_links() || obs.intervals != dnl_cfg.horizon_intervals {
        return Err(Error::Dimension("observations do not match network and horizon".into()));
    }
    if q.num_od() != net.num_od() || q.intervals() != dnl_cfg.horizon_intervals {
        return Err(Error::Dimension("initial demand does not match network and horizon".into()));
    }
    q.check()?;
    let p = default_route_proportions(paths, dnl_cfg)?;
    let mut trace = ConvergenceTrace::default();
    let mut adam = Adam {
        m: std::array::from_fn(|_| vec![0.0; q.num_od() * q.intervals()]),
        v: std::array::from_fn(|_| vec![0.0; q.num_od() * q.intervals()]),
        t: 0,
    };
    let window = match est_cfg.optimizer {
        OptimizerKind::Adam => 0,
        OptimizerKind::LineSearch => est_cfg.acceptance_window,
    };
    let mut current: Option<Rc<Iterate>> = None;
    let mut best: Option<Rc<Iterate>> = None;
    // move cap multiplier of the line-search optimizer
    let mut radius: f64 = INITIAL_RADIUS;
    // loss of the iterate stepped from and the reduction the linear model predicted
    let mut last_step: Option<(f64, f64)> = None;

    for epoch in 1..=est_cfg.epochs {
        let fp = forward_pass(
            net,
            paths,
            &p,
            &q,
            obs,
            w,
            dnl_cfg,
            est_cfg.travel_time_gradient,
            est_cfg.dnl_seed,
            current.as_ref().map(|c| &c.lin.dar),
        )?;
        trace.dnl_evaluations += 1;
        let loss = fp.loss;
        if !loss.total.is_finite() || loss.total > est_cfg.divergence_threshold {
            trace.push(epoch, &loss, f64::NAN);
            return Err(Error::Diverged {
                epoch,
                loss: loss.total,
                trace: Box::new(trace),
            });
        }
        if let Some((from, predicted)) = last_step {
            radius = update_radius(radius, from - loss.total, predicted);
        }
        let n = trace.records.len();
        let accept = window == 0 || n < window || loss.total <= trace.records[n - window].loss;
        if accept {
            let g = compute_gradient(&fp.lin, &fp.out.states, obs, w)?;
            let it = Rc::new(Iterate {
                grad_norm: norm(&g),
                q,
                loss,
                lin: fp.lin,
                g,
            });
            if best.as_ref().is_none_or(|b| it.loss.total < b.loss.total) {
                best = Some(it.clone());
            }
            current = Some(it);
        } else {
            debug!("epoch {epoch}: trial loss {:.6e} rejected", loss.total);
            current = best.clone();
        }
        let cur = current.clone().expect("first epoch is always accepted");
        trace.push(epoch, &cur.loss, cur.grad_norm);
        debug!("epoch {epoch}: loss {:.6e} |g| {:.3e}", cur.loss.total, cur.grad_norm);
        if cur.loss.total == 0.0 || converged(&trace, est_cfg) || epoch == est_cfg.epochs {
            break;
        }
        let lr_scale = 1.0 / (1.0 + est_cfg.lr_decay * (epoch - 1) as f64);
        q = cur.q.clone();
        match est_cfg.optimizer {
            OptimizerKind::Adam => adam_step(&mut q, &cur.g, &mut adam, est_cfg, lr_scale),
            OptimizerKind::LineSearch => {
                let eta = scaled_step(&cur.g, est_cfg.learning_rate.map(|l| l * lr_scale * radius));
                q = line_search_step(&cur.lin, &q, &cur.g, obs, w, eta)?.0;
                let predicted = cur.loss.total - linearized_loss(&cur.lin, &q, obs, w)?.total;
                last_step = Some((cur.loss.total, predicted));
            }
        }
    }
    let best = best.expect("at least one epoch ran");
    info!(
        "solver finished after {} epochs, best loss {:.6e}",
        trace.records.len(),
        best.loss.total
    );
    Ok((best.q.clone(), trace))
}

/// A demand iterate with its loader linearization.
struct Iterate {
    q: DemandTensor,
    loss: LossBreakdown,
    lin: Linearization,
    g: DemandTensor,
    grad_norm: f64,
}

const INITIAL_RADIUS: f64 = 1.0;

/// Trust-region style update from the ratio of actual to predicted
/// reduction.
fn update_radius(radius: f64, actual: f64, predicted: f64) -> f64 {
    const LO: f64 = 0.25;
    const HI: f64 = 0.75;
    let ratio = if predicted > 0.0 { actual / predicted } else if actual >= 0.0 { 1.0 } else { -1.0 };
    if ratio < LO {
        (radius * 0.5).max(MIN_RADIUS)
    } else if ratio > HI {
        (radius * 2.0).min(1.0)
    } else {
        radius
    }
}
const MIN_RADIUS: f64 = 1.0 / 1024.0;

/// Per-class step that moves the largest gradient coordinate by `max_move`.
fn scaled_step(g: &DemandTensor, max_move: [f64; NUM_CLASSES]) -> [f64; NUM_CLASSES] {
    VehicleClass::ALL.map(|c| {
        let gmax = g.class_slice(c).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gmax > 0.0 {
            max_move[c.index()] / gmax
        } else {
            0.0
        }
    })
}

fn converged(trace: &ConvergenceTrace, cfg: &EstimatorConfig) -> bool {
    let l = &trace.records;
    if l.len() <= cfg.patience {
        return false;
    }
    let now = l[l.len() - 1].loss;
    let then = l[l.len() - 1 - cfg.patience].loss;
    (then - now).abs() <= cfg.tolerance * then.abs().max(f64::MIN_POSITIVE)
}

fn adam_step(q: &mut DemandTensor, g: &DemandTensor, st: &mut Adam, cfg: &EstimatorConfig, lr_scale: f64) {
    st.t += 1;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(st.t);
    let c2 = 1.0 - b2.powi(st.t);
    for class in VehicleClass::ALL {
        let c = class.index();
        let lr = cfg.learning_rate[c] * lr_scale;
        let gc = g.class_slice(class);
        let qc = q.class_slice_mut(class);
        for i in 0..qc.len() {
            st.m[c][i] = b1 * st.m[c][i] + (1.0 - b1) * gc[i];
            st.v[c][i] = b2 * st.v[c][i] + (1.0 - b2) * gc[i] * gc[i];
            let mh = st.m[c][i] / c1;
            let vh = st.v[c][i] / c2;
            qc[i] = (qc[i] - lr * mh / (vh.sqrt() + 1e-8)).max(0.0);
        }
    }
}

/// Projected step `d = P(q - eta g) - q` followed by the exact minimizer of
/// the linearized loss along `q + alpha d`, `alpha` in `[0, 1]`. Returns the
/// new iterate and `alpha`.
pub fn line_search_step(
    lin: &Linearization,
    q: &DemandTensor,
    g: &DemandTensor,
    obs: &ObservationSet,
    w: &LossWeights,
    eta: [f64; NUM_CLASSES],
) -> Result<(DemandTensor, f64)> {
    let mut d = DemandTensor::zeros(q.num_od(), q.intervals());
    for class in VehicleClass::ALL {
        let e = eta[class.index()];
        let (qc, gc) = (q.class_slice(class), g.class_slice(class));
        for (i, di) in d.class_slice_mut(class).iter_mut().enumerate() {
            *di = (qc[i] - e * gc[i]).max(0.0) - qc[i];
        }
    }
    let along = |a: f64| {
        let mut out = q.clone();
        for class in VehicleClass::ALL {
            let dc = d.class_slice(class).to_vec();
            for (v, di) in out.class_slice_mut(class).iter_mut().zip(dc) {
                *v = (*v + a * di).max(0.0);
            }
        }
        out
    };
    // the linearized loss is quadratic in alpha: l(a) = l0 + b a + c a^2
    let l0 = linearized_loss(lin, q, obs, w)?.total;
    let l1 = linearized_loss(lin, &along(1.0), obs, w)?.total;
    let lh = linearized_loss(lin, &along(0.5), obs, w)?.total;
    let c = 2.0 * (l1 - 2.0 * lh + l0);
    let b = l1 - l0 - c;
    let alpha = if c > 0.0 {
        (-b / (2.0 * c)).clamp(0.0, 1.0)
    } else if l1 < l0 {
        1.0
    } else {
        0.0
    };
    let next = along(alpha);
    // guard against rounding in the quadratic fit
    if linearized_loss(lin, &next, obs, w)?.total > l0 {
        return Ok((q.clone(), 0.0));
    }
    Ok((next, alpha))
}
