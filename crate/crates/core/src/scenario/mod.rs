//! End-to-end experiments on synthetic ground truth.
//!
//! A run loads ground-truth demand onto the network, samples the observed
//! segments, perturbs the measurements, estimates demand and scores the
//! estimate against the measurements on observed and unobserved segments.

mod suite;

pub use suite::{compare_solvers, sensitivity_suite, CompareReport, SensitivityAxis, SensitivityReport, SensitivityRow};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::benchmark::{fit_pca, generate_od_samples, solve_pc_spsa, SpsaConfig};
use crate::dnl::{assign_path_flows, run_dnl, DnlConfig, LinkStateTensor};
use crate::estimator::{
    compute_metrics, default_route_proportions, random_demand, solve_dode_from, ConvergenceTrace, DemandTensor,
    EstimatorConfig, FitMetrics, GroupSpec, LossWeights, ObservationSet, Stream,
};
use crate::network::{load_network, load_node_coords, load_path_file, Network, PathSet};
use crate::observation::{inject_noise, match_detections, DensitySnapshot, SyntheticDetections};
use crate::synthetic::{grid_network, peaked_demand, toy_demand, toy_network};
use crate::{Error, Result, VehicleClass, NUM_CLASSES};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// Counts and travel times on observed segments.
    #[default]
    CountsOnly,
    /// Counts and travel times plus density snapshots of every segment.
    CountsPlusDensity,
    /// The PCA + SPSA baseline on the counts-plus-density observations.
    PcSpsa,
}

impl ScenarioKind {
    pub fn uses_density(self) -> bool {
        !matches!(self, ScenarioKind::CountsOnly)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NetworkSource {
    Toy,
    Grid {
        rows: usize,
        cols: usize,
        seed: u64,
    },
    Files {
        links: PathBuf,
        od: PathBuf,
        #[serde(default)]
        nodes: Option<PathBuf>,
        #[serde(default)]
        paths: Option<PathBuf>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruthSpec {
    pub seed: u64,
    /// Range of the base car volume per OD pair and interval.
    pub car_range: (f64, f64),
    /// Demand CSV to use instead of the generator.
    pub file: Option<PathBuf>,
}

impl Default for TruthSpec {
    fn default() -> Self {
        TruthSpec {
            seed: 5,
            car_range: (60.0, 160.0),
            file: None,
        }
    }
}

/// Multiplicative noise level per stream.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseLevels {
    pub count: f64,
    pub time: f64,
    pub density: f64,
}

impl Default for NoiseLevels {
    fn default() -> Self {
        NoiseLevels {
            count: 0.1,
            time: 0.1,
            density: 0.1,
        }
    }
}

impl NoiseLevels {
    pub fn uniform(level: f64) -> Self {
        NoiseLevels {
            count: level,
            time: level,
            density: level,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensitySource {
    /// Simulated vehicles on each segment.
    Exact,
    /// Synthetic detections matched back onto the network.
    #[default]
    Detections,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensitySettings {
    /// Time between snapshots; a multiple of the interval length.
    pub snapshot_every_s: u32,
    pub source: DensitySource,
    pub buffer_m: f64,
    pub lateral_m: f64,
    pub clutter: usize,
}

impl Default for DensitySettings {
    fn default() -> Self {
        DensitySettings {
            snapshot_every_s: 900,
            source: DensitySource::Detections,
            buffer_m: crate::observation::DEFAULT_BUFFER_M,
            lateral_m: 4.0,
            clutter: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpsaSettings {
    pub solver: SpsaConfig,
    /// Extra OD samples drawn around the template.
    pub samples: usize,
    pub perturbation: f64,
    pub variance_threshold: f64,
    pub sample_seed: u64,
}

impl Default for SpsaSettings {
    fn default() -> Self {
        SpsaSettings {
            solver: SpsaConfig::default(),
            samples: 299,
            perturbation: 0.2,
            variance_threshold: 0.95,
            sample_seed: 11,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    #[default]
    Random,
    Truth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub kind: ScenarioKind,
    /// Drives segment sampling, noise and synthetic detections.
    pub seed: u64,
    pub network: NetworkSource,
    pub k_paths: usize,
    pub truth: TruthSpec,
    pub observed_links: usize,
    pub noise: NoiseLevels,
    pub density: DensitySettings,
    /// Explicit `(count, time, density)` weights; scale-balanced when absent.
    pub weights: Option<(f64, f64, f64)>,
    pub init: InitKind,
    pub estimator: EstimatorConfig,
    pub spsa: SpsaSettings,
    pub dnl: DnlConfig,
    pub out_dir: PathBuf,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: "toy".into(),
            kind: ScenarioKind::CountsOnly,
            seed: 1,
            network: NetworkSource::Toy,
            k_paths: 3,
            truth: TruthSpec::default(),
            observed_links: 6,
            noise: NoiseLevels::default(),
            density: DensitySettings::default(),
            weights: None,
            init: InitKind::Random,
            estimator: EstimatorConfig::default(),
            spsa: SpsaSettings::default(),
            dnl: DnlConfig::default(),
            out_dir: PathBuf::from("out"),
        }
    }
}

impl ScenarioConfig {
    /// Reads a TOML config, or the `config` field of a JSON run summary.
    /// Relative file paths are resolved against the file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ScenarioConfig = if path.extension().is_some_and(|e| e == "json") {
            let v: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))?;
            let inner = v.get("config").cloned().unwrap_or(v);
            serde_json::from_value(inner).map_err(|e| Error::parse(path.display().to_string(), e))?
        } else {
            toml::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))?
        };
        // Absolute, so a summary written from this config replays from anywhere.
        let base = std::path::absolute(path.parent().unwrap_or(Path::new("."))).map_err(|e| Error::io(path, e))?;
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let NetworkSource::Files { links, od, nodes, paths } = &mut cfg.network {
            fix(links);
            fix(od);
            nodes.iter_mut().for_each(fix);
            paths.iter_mut().for_each(fix);
        }
        cfg.truth.file.iter_mut().for_each(fix);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.dnl.validate()?;
        self.estimator.validate()?;
        if self.k_paths == 0 {
            return Err(Error::Config("k_paths must be at least 1".into()));
        }
        for v in [self.noise.count, self.noise.time, self.noise.density] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("noise level {v} outside [0, 1)")));
            }
        }
        let d = &self.density;
        if d.snapshot_every_s == 0 || d.snapshot_every_s % self.dnl.interval_s != 0 {
            return Err(Error::Config(format!(
                "snapshot spacing {} s must be a positive multiple of the interval {} s",
                d.snapshot_every_s, self.dnl.interval_s
            )));
        }
        if let NetworkSource::Files { links, od, nodes, paths } = &self.network {
            for p in [Some(links), Some(od), nodes.as_ref(), paths.as_ref()].into_iter().flatten() {
                if !p.exists() {
                    return Err(Error::Config(format!("file {} does not exist", p.display())));
                }
            }
        }
        if let Some(p) = &self.truth.file {
            if !p.exists() {
                return Err(Error::Config(format!("file {} does not exist", p.display())));
            }
        }
        if let Some((a, b, c)) = self.weights {
            LossWeights::new(a, b, c)?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn snapshot_intervals(&self) -> Vec<usize> {
        let stride = (self.density.snapshot_every_s / self.dnl.interval_s).max(1) as usize;
        (0..self.dnl.horizon_intervals).step_by(stride).collect()
    }
}

fn sub_seed(seed: u64, tag: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ tag.wrapping_mul(0xD1B5_4A32_D192_ED03)
}

pub fn build_network(cfg: &ScenarioConfig) -> Result<(Network, PathSet)> {
    let net = match &cfg.network {
        NetworkSource::Toy => toy_network(),
        NetworkSource::Grid { rows, cols, seed } => {
            if *rows == 0 || *cols < 2 {
                return Err(Error::Config("grid needs at least 1 row and 2 columns".into()));
            }
            grid_network(*rows, *cols, *seed)
        }
        NetworkSource::Files { links, od, nodes, .. } => {
            let mut net = load_network(links, od)?;
            if let Some(n) = nodes {
                net.set_coords(load_node_coords(n)?);
            }
            net
        }
    };
    let paths = match &cfg.network {
        NetworkSource::Files { paths: Some(p), .. } => load_path_file(&net, p)?,
        _ => PathSet::shared(&net, cfg.k_paths)?,
    };
    Ok((net, paths))
}

pub fn truth_demand(cfg: &ScenarioConfig, net: &Network) -> Result<DemandTensor> {
    let t = cfg.dnl.horizon_intervals;
    if let Some(p) = &cfg.truth.file {
        return DemandTensor::read_csv(net, t, p);
    }
    let (lo, hi) = cfg.truth.car_range;
    if !(0.0 <= lo && lo <= hi && hi.is_finite()) {
        return Err(Error::Config("truth car_range must satisfy 0 <= lo <= hi".into()));
    }
    if matches!(cfg.network, NetworkSource::Toy) && net.num_od() == 6 && (lo, hi) == (60.0, 160.0) {
        return Ok(toy_demand(t, cfg.truth.seed));
    }
    Ok(peaked_demand(net.num_od(), t, (lo, hi), cfg.truth.seed))
}

/// Noisy measurements of every segment, class and interval, laid out like
/// [`LinkStateTensor`] fields.
#[derive(Clone, Debug, PartialEq)]
pub struct Measurements {
    pub count: [Vec<f64>; NUM_CLASSES],
    pub time: [Vec<f64>; NUM_CLASSES],
    pub density: [Vec<f64>; NUM_CLASSES],
}

/// Everything the solvers share: network, truth and observations.
pub struct Prepared {
    pub net: Network,
    pub paths: PathSet,
    pub truth: DemandTensor,
    pub truth_states: LinkStateTensor,
    pub measurements: Measurements,
    pub observed: Vec<usize>,
    pub unobserved: Vec<usize>,
    pub snapshots: Vec<usize>,
    pub obs: ObservationSet,
    pub weights: LossWeights,
}

fn density_measurement(
    cfg: &ScenarioConfig,
    net: &Network,
    states: &LinkStateTensor,
) -> Result<[Vec<f64>; NUM_CLASSES]> {
    let t_n = states.intervals;
    match cfg.density.source {
        DensitySource::Exact => Ok(states.density.clone()),
        DensitySource::Detections => {
            let mut out: [Vec<f64>; NUM_CLASSES] = std::array::from_fn(|_| vec![0.0; states.flow[0].len()]);
            for t in 0..t_n {
                let remaining: [Vec<f64>; NUM_CLASSES] = std::array::from_fn(|c| {
                    (0..net.num_links()).map(|l| states.density[c][states.idx(l, t)]).collect()
                });
                let gen = SyntheticDetections {
                    net,
                    snapshot_id: t as u32,
                    interval: t,
                    lateral_m: cfg.density.lateral_m,
                    clutter: cfg.density.clutter,
                };
                let dets = gen.generate(&remaining, sub_seed(cfg.seed, 100 + t as u64))?;
                let matches = match_detections(&dets, net, cfg.density.buffer_m)?;
                let snap = DensitySnapshot::from_matches(net, &dets, &matches, t as u32, t)?;
                for c in 0..NUM_CLASSES {
                    for l in 0..net.num_links() {
                        out[c][states.idx(l, t)] = snap.counts[c][l] as f64;
                    }
                }
            }
            Ok(out)
        }
    }
}

/// Runs the ground truth, samples segments and builds the observations.
pub fn prepare(cfg: &ScenarioConfig) -> Result<Prepared> {
    cfg.validate()?;
    let (net, paths) = build_network(cfg)?;
    let truth = truth_demand(cfg, &net)?;
    let p = default_route_proportions(&paths, &cfg.dnl)?;
    let f = assign_path_flows(&truth, &p, &paths)?;
    let truth_states = run_dnl(&net, &paths, &f, &cfg.dnl, cfg.estimator.dnl_seed)?.states;

    let segments = net.segment_indices();
    if cfg.observed_links > segments.len() {
        return Err(Error::Config(format!(
            "cannot observe {} of {} segments",
            cfg.observed_links,
            segments.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, 1));
    let mut observed: Vec<usize> = segments.choose_multiple(&mut rng, cfg.observed_links).copied().collect();
    observed.sort_unstable();
    let unobserved: Vec<usize> = segments.iter().copied().filter(|l| !observed.contains(l)).collect();

    let noisy = |vals: &[Vec<f64>; NUM_CLASSES], level: f64, tag: u64| -> Result<[Vec<f64>; NUM_CLASSES]> {
        Ok([
            inject_noise(&vals[0], level, sub_seed(cfg.seed, tag))?,
            inject_noise(&vals[1], level, sub_seed(cfg.seed, tag + 1))?,
        ])
    };
    let measurements = Measurements {
        count: noisy(&truth_states.flow, cfg.noise.count, 10)?,
        time: noisy(&truth_states.travel_time, cfg.noise.time, 20)?,
        density: noisy(&density_measurement(cfg, &net, &truth_states)?, cfg.noise.density, 30)?,
    };

    let t_n = cfg.dnl.horizon_intervals;
    let snapshots = cfg.snapshot_intervals();
    let mut obs = ObservationSet::new(net.num_links(), t_n);
    for &l in &observed {
        for c in VehicleClass::ALL {
            for t in 0..t_n {
                let i = truth_states.idx(l, t);
                let cell = GroupSpec::cell(c, l, t);
                obs.push(Stream::Count, &cell, measurements.count[c.index()][i])?;
                obs.push(Stream::Time, &cell, measurements.time[c.index()][i])?;
            }
        }
    }
    if cfg.kind.uses_density() {
        for &t in &snapshots {
            for &l in &segments {
                for c in VehicleClass::ALL {
                    let v = measurements.density[c.index()][truth_states.idx(l, t)];
                    obs.push(Stream::Density, &GroupSpec::cell(c, l, t), v)?;
                }
            }
        }
    }
    let weights = match cfg.weights {
        Some((a, b, c)) => LossWeights::new(a, b, c)?,
        None => LossWeights::balanced(&obs),
    };
    Ok(Prepared {
        net,
        paths,
        truth,
        truth_states,
        measurements,
        observed,
        unobserved,
        snapshots,
        obs,
        weights,
    })
}

/// `metrics[stream][subset]`
pub type MetricTable = BTreeMap<String, BTreeMap<String, FitMetrics>>;

impl Prepared {
    pub fn initial_demand(&self, cfg: &ScenarioConfig) -> DemandTensor {
        match cfg.init {
            InitKind::Truth => self.truth.clone(),
            InitKind::Random => random_demand(
                self.net.num_od(),
                cfg.dnl.horizon_intervals,
                cfg.estimator.init_scale,
                cfg.estimator.init_seed,
            ),
        }
    }

    /// Scores the loader states of `q` against the measurements on every
    /// interval.
    pub fn evaluate(&self, cfg: &ScenarioConfig, q: &DemandTensor) -> Result<MetricTable> {
        let p = default_route_proportions(&self.paths, &cfg.dnl)?;
        let f = assign_path_flows(q, &p, &self.paths)?;
        let st = run_dnl(&self.net, &self.paths, &f, &cfg.dnl, cfg.estimator.dnl_seed)?.states;
        let mut table = MetricTable::new();
        let streams: [(&str, &[Vec<f64>; NUM_CLASSES], &[Vec<f64>; NUM_CLASSES]); 3] = [
            ("count", &st.flow, &self.measurements.count),
            ("time", &st.travel_time, &self.measurements.time),
            ("density", &st.density, &self.measurements.density),
        ];
        for (name, model, meas) in streams {
            let entry = table.entry(name.to_string()).or_default();
            for (subset, links) in [("observed", &self.observed), ("unobserved", &self.unobserved)] {
                let (mut e, mut r) = (Vec::new(), Vec::new());
                for &l in links {
                    for c in 0..NUM_CLASSES {
                        for t in 0..st.intervals {
                            e.push(model[c][st.idx(l, t)]);
                            r.push(meas[c][st.idx(l, t)]);
                        }
                    }
                }
                entry.insert(subset.to_string(), compute_metrics(&e, &r)?);
            }
        }
        Ok(table)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub r2: Option<f64>,
    pub mae: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub scenario: u64,
    pub truth: u64,
    pub init: u64,
    pub dnl: u64,
    pub spsa: u64,
    pub pca_samples: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub kind: ScenarioKind,
    pub seeds: Seeds,
    pub config_hash: String,
    pub metrics: BTreeMap<String, BTreeMap<String, MetricSummary>>,
    /// Mean absolute demand error per class (car, truck).
    pub demand_mae: [f64; NUM_CLASSES],
    pub observed_links: Vec<u32>,
    pub dnl_evaluations: usize,
    pub runtime_s: f64,
    pub config: ScenarioConfig,
}

pub struct ScenarioReport {
    pub summary: RunSummary,
    pub metrics: MetricTable,
    pub estimate: DemandTensor,
    pub truth: DemandTensor,
    pub trace: ConvergenceTrace,
}

/// Runs one solver on prepared observations.
pub fn solve(cfg: &ScenarioConfig, prep: &Prepared, kind: ScenarioKind) -> Result<(DemandTensor, ConvergenceTrace)> {
    let q0 = prep.initial_demand(cfg);
    match kind {
        ScenarioKind::CountsOnly | ScenarioKind::CountsPlusDensity => solve_dode_from(
            &prep.net,
            &prep.paths,
            &prep.obs,
            &prep.weights,
            &cfg.estimator,
            &cfg.dnl,
            q0,
        ),
        ScenarioKind::PcSpsa => {
            let s = &cfg.spsa;
            let samples = generate_od_samples(&prep.truth, s.samples, s.perturbation, s.sample_seed)?;
            let basis = fit_pca(&samples, s.variance_threshold)?;
            solve_pc_spsa(
                &prep.net,
                &prep.paths,
                &prep.obs,
                &prep.weights,
                &basis,
                &q0,
                &s.solver,
                &cfg.dnl,
            )
        }
    }
}

pub fn write_metrics_csv(table: &MetricTable, demand_mae: [f64; NUM_CLASSES], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    let io = |e| Error::csv(path, e);
    w.write_record(["stream", "subset", "r2", "mae", "rmse", "n"]).map_err(io)?;
    for (stream, subsets) in table {
        for (subset, m) in subsets {
            let r2 = m.r2.map(|v| v.to_string()).unwrap_or_default();
            w.write_record([stream, subset, &r2, &m.mae.to_string(), &m.rmse.to_string(), &m.n.to_string()])
                .map_err(io)?;
        }
    }
    for c in VehicleClass::ALL {
        w.write_record(["demand", c.as_str(), "", &demand_mae[c.index()].to_string(), "", ""])
            .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub(crate) fn summarize(table: &MetricTable) -> BTreeMap<String, BTreeMap<String, MetricSummary>> {
    table
        .iter()
        .map(|(s, subs)| {
            let inner = subs
                .iter()
                .map(|(k, m)| (k.clone(), MetricSummary { r2: m.r2, mae: m.mae }))
                .collect();
            (s.clone(), inner)
        })
        .collect()
}

/// Runs a scenario and writes `observations.csv`, `truth.csv`,
/// `trace.csv`, `estimate.csv`, `metrics.csv` and `summary.json` into
/// `cfg.out_dir`. Files written before a failure are kept.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioReport> {
    let start = Instant::now();
    let out = &cfg.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    fs::write(out.join("config.toml"), cfg.to_toml()?).map_err(|e| Error::io(out.join("config.toml"), e))?;
    let prep = prepare(cfg)?;
    prep.obs.write_csv(&prep.net, &out.join("observations.csv"))?;
    prep.truth.write_csv(&prep.net, &out.join("truth.csv"))?;
    info!(
        "{}: {} observed segments, {} snapshots",
        cfg.name,
        prep.observed.len(),
        if cfg.kind.uses_density() { prep.snapshots.len() } else { 0 }
    );

    let (estimate, trace) = match solve(cfg, &prep, cfg.kind) {
        Ok(r) => r,
        Err(Error::Diverged { epoch, loss, trace }) => {
            trace.write_csv(&out.join("trace.csv"))?;
            return Err(Error::Diverged { epoch, loss, trace });
        }
        Err(e) => return Err(e),
    };
    trace.write_csv(&out.join("trace.csv"))?;
    estimate.write_csv(&prep.net, &out.join("estimate.csv"))?;
    let metrics = prep.evaluate(cfg, &estimate)?;
    let demand_mae = estimate.mae(&prep.truth);
    write_metrics_csv(&metrics, demand_mae, &out.join("metrics.csv"))?;

    let summary = RunSummary {
        scenario: cfg.name.clone(),
        kind: cfg.kind,
        seeds: Seeds {
            scenario: cfg.seed,
            truth: cfg.truth.seed,
            init: cfg.estimator.init_seed,
            dnl: cfg.estimator.dnl_seed,
            spsa: cfg.spsa.solver.seed,
            pca_samples: cfg.spsa.sample_seed,
        },
        config_hash: cfg.hash(),
        metrics: summarize(&metrics),
        demand_mae,
        observed_links: prep.observed.iter().map(|&l| prep.net.link(l).id).collect(),
        dnl_evaluations: trace.dnl_evaluations,
        runtime_s: start.elapsed().as_secs_f64(),
        config: cfg.clone(),
    };
    write_json(&summary, &out.join("summary.json"))?;
    Ok(ScenarioReport {
        summary,
        metrics,
        estimate,
        truth: prep.truth,
        trace,
    })
}

#[cfg(test)]
mod tests;
