//! Principal-component SPSA baseline.
//!
//! Demand is represented per class and interval as `mean + V z`, where the
//! columns of `V` are principal components of sampled interval-level OD
//! vectors. SPSA then searches over `z` using two loader runs per
//! iteration.

use log::debug;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dnl::{assign_path_flows, run_dnl, DnlConfig, RouteProportions};
use crate::estimator::{
    compute_loss, default_route_proportions, ConvergenceTrace, DemandTensor, LossBreakdown, LossWeights,
    ObservationSet,
};
use crate::network::{Network, PathSet};
use crate::{Error, Result, VehicleClass, NUM_CLASSES};

/// Demand samples sharing one shape. Interval-level vectors are the OD
/// columns `q[class][.][t]` of every sample.
#[derive(Clone, Debug, PartialEq)]
pub struct OdSampleSet {
    pub samples: Vec<DemandTensor>,
}

impl OdSampleSet {
    pub fn interval_vectors(&self, class: VehicleClass) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for s in &self.samples {
            for t in 0..s.intervals() {
                out.push((0..s.num_od()).map(|od| s.get(class, od, t)).collect());
            }
        }
        out
    }
}

/// The template followed by `n` copies scaled elementwise by
/// `Uniform(1 - perturbation, 1 + perturbation)`, clipped at zero.
pub fn generate_od_samples(template: &DemandTensor, n: usize, perturbation: f64, seed: u64) -> Result<OdSampleSet> {
    if n == 0 {
        return Err(Error::InvalidInput("at least one sample is required".into()));
    }
    if !(perturbation >= 0.0 && perturbation.is_finite()) {
        return Err(Error::InvalidInput("perturbation must be >= 0".into()));
    }
    template.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n + 1);
    samples.push(template.clone());
    for _ in 0..n {
        let mut s = template.clone();
        for c in VehicleClass::ALL {
            for v in s.class_slice_mut(c) {
                let f = if perturbation > 0.0 {
                    rng.gen_range(1.0 - perturbation..=1.0 + perturbation)
                } else {
                    1.0
                };
                *v = (*v * f).max(0.0);
            }
        }
        samples.push(s);
    }
    Ok(OdSampleSet { samples })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcBasis {
    pub mean: Vec<f64>,
    /// Orthonormal component vectors.
    pub components: Vec<Vec<f64>>,
    /// Variance of each retained component.
    pub variances: Vec<f64>,
    /// Share of total variance kept.
    pub explained: f64,
}

impl PcBasis {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn rank(&self) -> usize {
        self.components.len()
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|v| v.iter().zip(x).zip(&self.mean).map(|((vi, xi), mi)| vi * (xi - mi)).sum())
            .collect()
    }

    pub fn reconstruct(&self, z: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (v, zj) in self.components.iter().zip(z) {
            for (o, vi) in out.iter_mut().zip(v) {
                *o += zj * vi;
            }
        }
        out
    }
}

/// PCA of row vectors. Keeps the fewest leading components whose variance
/// share reaches `variance_threshold`; each component's largest-magnitude
/// coordinate is positive.
pub fn fit_pca_vectors(vectors: &[Vec<f64>], variance_threshold: f64) -> Result<PcBasis> {
    if vectors.len() < 2 {
        return Err(Error::InvalidInput("PCA needs at least two samples".into()));
    }
    if !(variance_threshold > 0.0 && variance_threshold <= 1.0) {
        return Err(Error::InvalidInput("variance threshold must lie in (0, 1]".into()));
    }
    let d = vectors[0].len();
    if d == 0 || vectors.iter().any(|v| v.len() != d) {
        return Err(Error::Dimension("PCA samples must share a nonzero length".into()));
    }
    let n = vectors.len();
    let mean: Vec<f64> = (0..d).map(|j| vectors.iter().map(|v| v[j]).sum::<f64>() / n as f64).collect();
    let x = DMatrix::from_fn(n, d, |i, j| vectors[i][j] - mean[j]);
    let svd = x.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::Invariant("SVD did not return right vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let var: Vec<f64> = order.iter().map(|&i| svd.singular_values[i].powi(2) / (n - 1) as f64).collect();
    let total: f64 = var.iter().sum();
    let top = var.first().copied().unwrap_or(0.0);
    if !(total > 0.0) || top <= 1e-12 * mean.iter().map(|m| m * m).sum::<f64>().max(1.0) {
        return Err(Error::InvalidInput("samples have zero variance".into()));
    }
    // components with negligible variance carry no information
    let significant = var.iter().take_while(|&&v| v > 1e-12 * top).count();
    let mut keep = 0;
    let mut acc = 0.0;
    while keep < significant {
        acc += var[keep];
        keep += 1;
        if acc / total >= variance_threshold - 1e-12 {
            break;
        }
    }
    let components = order[..keep]
        .iter()
        .map(|&i| {
            let mut v: Vec<f64> = v_t.row(i).iter().copied().collect();
            let lead = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            if lead < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();
    Ok(PcBasis {
        mean,
        components,
        variances: var[..keep].to_vec(),
        explained: acc / total,
    })
}

/// One basis per class, fitted on interval-level OD vectors.
pub fn fit_pca(samples: &OdSampleSet, variance_threshold: f64) -> Result<[PcBasis; NUM_CLASSES]> {
    let [a, b] = VehicleClass::ALL.map(|c| fit_pca_vectors(&samples.interval_vectors(c), variance_threshold));
    Ok([a?, b?])
}

/// PC coordinates `z[class][t * rank + j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PcCoordinates {
    pub intervals: usize,
    pub values: [Vec<f64>; NUM_CLASSES],
}

impl PcCoordinates {
    pub fn project(basis: &[PcBasis; NUM_CLASSES], q: &DemandTensor) -> Self {
        let t_n = q.intervals();
        let values = VehicleClass::ALL.map(|c| {
            let b = &basis[c.index()];
            (0..t_n)
                .flat_map(|t| {
                    let col: Vec<f64> = (0..q.num_od()).map(|od| q.get(c, od, t)).collect();
                    b.project(&col)
                })
                .collect()
        });
        PcCoordinates { intervals: t_n, values }
    }

    /// `q(z) = max(0, mean + V z)`.
    pub fn demand(&self, basis: &[PcBasis; NUM_CLASSES]) -> DemandTensor {
        let num_od = basis[0].dim();
        let mut q = DemandTensor::zeros(num_od, self.intervals);
        for c in VehicleClass::ALL {
            let b = &basis[c.index()];
            let r = b.rank();
            for t in 0..self.intervals {
                let col = b.reconstruct(&self.values[c.index()][t * r..(t + 1) * r]);
                for (od, v) in col.into_iter().enumerate() {
                    q.set(c, od, t, v.max(0.0));
                }
            }
        }
        q
    }

    fn len(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpsaConfig {
    pub iterations: usize,
    /// Step gain numerator, applied to the loss normalized by its initial
    /// value.
    pub a: f64,
    /// Perturbation size numerator, in PC units.
    pub c: f64,
    pub alpha: f64,
    pub gamma: f64,
    /// Stability constant; `None` uses 10% of the iteration budget.
    pub stability: Option<f64>,
    pub seed: u64,
    pub dnl_seed: u64,
}

impl Default for SpsaConfig {
    fn default() -> Self {
        SpsaConfig {
            iterations: 50,
            a: 1000.0,
            c: 2.0,
            alpha: 0.602,
            gamma: 0.101,
            stability: None,
            seed: 0,
            dnl_seed: 0,
        }
    }
}

impl SpsaConfig {
    pub fn gains(&self, k: usize) -> (f64, f64) {
        let big_a = self.stability.unwrap_or(0.1 * self.iterations as f64);
        let k = (k + 1) as f64;
        (self.a / (k + big_a).powf(self.alpha), self.c / k.powf(self.gamma))
    }
}

/// `(loss, loader runs)` of one demand evaluation.
struct Evaluator<'a> {
    net: &'a Network,
    paths: &'a PathSet,
    p: RouteProportions,
    obs: &'a ObservationSet,
    w: &'a LossWeights,
    dnl_cfg: &'a DnlConfig,
    seed: u64,
}

impl Evaluator<'_> {
    fn loss(&self, q: &DemandTensor) -> Result<LossBreakdown> {
        let f = assign_path_flows(q, &self.p, self.paths)?;
        let out = run_dnl(self.net, self.paths, &f, self.dnl_cfg, self.seed)?;
        compute_loss(&out.states, self.obs, self.w)
    }
}

fn diverged(epoch: usize, loss: f64, trace: ConvergenceTrace) -> Error {
    Error::Diverged {
        epoch,
        loss,
        trace: Box::new(trace),
    }
}

/// SPSA over PC coordinates starting from the projection of `init`. The
/// trace holds the loss at the start, the mean of the two probes of each
/// iteration and, if any iteration ran, the loss at the final iterate.
#[allow(clippy::too_many_arguments)]
pub fn solve_pc_spsa(
    net: &Network,
    paths: &PathSet,
    obs: &ObservationSet,
    w: &LossWeights,
    basis: &[PcBasis; NUM_CLASSES],
    init: &DemandTensor,
    cfg: &SpsaConfig,
    dnl_cfg: &DnlConfig,
) -> Result<(DemandTensor, ConvergenceTrace)> {
    dnl_cfg.validate()?;
    w.validate()?;
    if basis.iter().any(|b| b.dim() != net.num_od()) || init.num_od() != net.num_od() {
        return Err(Error::Dimension("PC basis does not match the OD pairs".into()));
    }
    if init.intervals() != dnl_cfg.horizon_intervals {
        return Err(Error::Dimension("initial demand does not match the horizon".into()));
    }
    let ev = Evaluator {
        net,
        paths,
        p: default_route_proportions(paths, dnl_cfg)?,
        obs,
        w,
        dnl_cfg,
        seed: cfg.dnl_seed,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut z = PcCoordinates::project(basis, init);
    let mut trace = ConvergenceTrace::default();
    let l0 = ev.loss(&z.demand(basis))?;
    trace.dnl_evaluations += 1;
    trace.push(0, &l0, 0.0);
    if !l0.total.is_finite() {
        return Err(diverged(0, l0.total, trace));
    }
    let scale = if l0.total > 0.0 { l0.total } else { 1.0 };

    for k in 0..cfg.iterations {
        let (ak, ck) = cfg.gains(k);
        let delta: Vec<f64> = (0..z.len()).map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
        let shifted = |sign: f64| {
            let mut zz = z.clone();
            let mut i = 0;
            for v in zz.values.iter_mut().flatten() {
                *v += sign * ck * delta[i];
                i += 1;
            }
            zz.demand(basis)
        };
        let (qp, qm) = (shifted(1.0), shifted(-1.0));
        let before = trace.dnl_evaluations;
        let (lp, lm) = rayon::join(|| ev.loss(&qp), || ev.loss(&qm));
        trace.dnl_evaluations += 2;
        assert_eq!(trace.dnl_evaluations - before, 2);
        let (lp, lm) = (lp?, lm?);
        let mean = LossBreakdown {
            total: 0.5 * (lp.total + lm.total),
            count: 0.5 * (lp.count + lm.count),
            time: 0.5 * (lp.time + lm.time),
            density: 0.5 * (lp.density + lm.density),
        };
        if !(lp.total.is_finite() && lm.total.is_finite()) {
            trace.push(k + 1, &mean, f64::NAN);
            return Err(diverged(k + 1, mean.total, trace));
        }
        let diff = (lp.total - lm.total) / scale / (2.0 * ck);
        let mut gnorm = 0.0;
        let mut i = 0;
        for v in z.values.iter_mut().flatten() {
            let g = diff / delta[i];
            gnorm += g * g;
            *v -= ak * g;
            i += 1;
        }
        trace.push(k + 1, &mean, gnorm.sqrt());
        debug!("spsa {}: probe mean {:.6e}", k + 1, mean.total);
    }
    let q = z.demand(basis);
    if cfg.iterations > 0 {
        let lf = ev.loss(&q)?;
        trace.dnl_evaluations += 1;
        trace.push(cfg.iterations + 1, &lf, 0.0);
        if !lf.total.is_finite() {
            return Err(diverged(cfg.iterations + 1, lf.total, trace));
        }
    }
    Ok((q, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{GroupSpec, Stream};
    use crate::synthetic::{toy_demand, toy_network};

    #[test]
    fn sample_count_includes_template() {
        let q = toy_demand(8, 1);
        let s = generate_od_samples(&q, 299, 0.2, 3).unwrap();
        assert_eq!(s.samples.len(), 300);
        assert_eq!(s.interval_vectors(VehicleClass::Car).len(), 2400);
        let same = generate_od_samples(&q, 4, 0.0, 3).unwrap();
        assert!(same.samples.iter().all(|x| *x == q));
        assert!(generate_od_samples(&q, 0, 0.1, 3).is_err());
    }

    #[test]
    fn sample_mean_approaches_template() {
        let q = toy_demand(4, 2);
        let s = generate_od_samples(&q, 4000, 0.3, 5).unwrap();
        for c in VehicleClass::ALL {
            for (i, &v) in q.class_slice(c).iter().enumerate() {
                let mean = s.samples[1..].iter().map(|x| x.class_slice(c)[i]).sum::<f64>() / 4000.0;
                // sd of the factor is 0.3 / sqrt(3); allow 4 standard errors
                let se = v * 0.3 / 3f64.sqrt() / (4000f64).sqrt();
                assert!((mean - v).abs() <= 4.0 * se + 1e-12, "{mean} vs {v}");
            }
        }
    }

    #[test]
    fn rank_one_set_keeps_one_component() {
        let dir = [1.0, 2.0, -2.0];
        let vs: Vec<Vec<f64>> = (0..20).map(|i| dir.iter().map(|d| 5.0 + d * i as f64).collect()).collect();
        let b = fit_pca_vectors(&vs, 0.95).unwrap();
        assert_eq!(b.rank(), 1);
        // sign convention: largest-magnitude coordinate positive
        let v = &b.components[0];
        let lead = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        assert!(lead > 0.0);
        assert!((b.explained - 1.0).abs() < 1e-12);
    }

    #[test]
    fn full_basis_reconstructs_and_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let vs: Vec<Vec<f64>> = (0..50).map(|_| (0..7).map(|_| rng.gen_range(0.0..100.0)).collect()).collect();
        let b = fit_pca_vectors(&vs, 1.0).unwrap();
        assert_eq!(b.rank(), 7);
        for i in 0..7 {
            for j in 0..7 {
                let dot: f64 = b.components[i].iter().zip(&b.components[j]).map(|(x, y)| x * y).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-10);
            }
        }
        for v in &vs {
            let r = b.reconstruct(&b.project(v));
            let err = r.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(err <= 1e-8 * norm);
        }
    }

    #[test]
    fn zero_variance_is_an_error() {
        let vs = vec![vec![1.0, 2.0]; 5];
        assert!(fit_pca_vectors(&vs, 0.9).is_err());
        assert!(fit_pca_vectors(&vs[..1], 0.9).is_err());
    }

    #[test]
    fn bernoulli_directions_average_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = 200_000;
        let s: f64 = (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).sum();
        assert!((s / n as f64).abs() < 3.0 / (n as f64).sqrt());
    }

    fn toy_setup() -> (Network, PathSet, DnlConfig, DemandTensor, ObservationSet) {
        let net = toy_network();
        let paths = PathSet::shared(&net, 3).unwrap();
        let cfg = DnlConfig {
            horizon_intervals: 4,
            ..DnlConfig::default()
        };
        let truth = toy_demand(4, 3);
        let p = default_route_proportions(&paths, &cfg).unwrap();
        let f = assign_path_flows(&truth, &p, &paths).unwrap();
        let st = run_dnl(&net, &paths, &f, &cfg, 0).unwrap().states;
        let mut obs = ObservationSet::new(net.num_links(), 4);
        for l in [0, 2, 4, 6] {
            for c in VehicleClass::ALL {
                for t in 0..4 {
                    obs.push(Stream::Count, &GroupSpec::cell(c, l, t), st.flow[c.index()][st.idx(l, t)]).unwrap();
                }
            }
        }
        (net, paths, cfg, truth, obs)
    }

    #[test]
    fn truth_projection_is_near_zero_loss() {
        let (net, paths, cfg, truth, obs) = toy_setup();
        let samples = generate_od_samples(&truth, 30, 0.2, 1).unwrap();
        let basis = fit_pca(&samples, 1.0).unwrap();
        let spsa = SpsaConfig {
            iterations: 0,
            ..SpsaConfig::default()
        };
        let (q, trace) =
            solve_pc_spsa(&net, &paths, &obs, &LossWeights::default(), &basis, &truth, &spsa, &cfg).unwrap();
        assert_eq!(trace.normalized(), vec![1.0]);
        assert!(trace.records[0].loss < 1e-6, "{}", trace.records[0].loss);
        assert_eq!(trace.dnl_evaluations, 1);
        assert!(q.mae(&truth).iter().all(|m| *m < 1e-6));
    }

    #[test]
    fn spsa_counts_runs_and_is_deterministic() {
        let (net, paths, cfg, truth, obs) = toy_setup();
        let samples = generate_od_samples(&truth, 50, 0.3, 1).unwrap();
        let basis = fit_pca(&samples, 0.95).unwrap();
        let init = crate::estimator::random_demand(net.num_od(), 4, [200.0, 20.0], 4);
        let spsa = SpsaConfig {
            iterations: 6,
            ..SpsaConfig::default()
        };
        let w = LossWeights::default();
        let a = solve_pc_spsa(&net, &paths, &obs, &w, &basis, &init, &spsa, &cfg).unwrap();
        let b = solve_pc_spsa(&net, &paths, &obs, &w, &basis, &init, &spsa, &cfg).unwrap();
        assert_eq!(a.1, b.1);
        assert_eq!(a.0, b.0);
        assert_eq!(a.1.dnl_evaluations, 2 * 6 + 2);
        assert_eq!(a.1.records.len(), 6 + 2);
        assert_eq!(a.1.normalized()[0], 1.0);
        assert!(VehicleClass::ALL.iter().all(|&c| a.0.class_slice(c).iter().all(|&v| v >= 0.0)));
    }
}
