use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{prepare, run_scenario, solve, summarize, MetricSummary, MetricTable, RunSummary, ScenarioConfig, ScenarioKind};
use crate::estimator::ConvergenceTrace;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityAxis {
    /// Noise level applied to every stream.
    ErrorLevel,
    /// Seconds between density snapshots.
    SnapshotFrequency,
}

impl std::str::FromStr for SensitivityAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "error_level" | "error-level" => Ok(SensitivityAxis::ErrorLevel),
            "snapshot_frequency" | "snapshot-frequency" => Ok(SensitivityAxis::SnapshotFrequency),
            _ => Err(Error::Config(format!("unknown sensitivity axis {s:?}"))),
        }
    }
}

impl SensitivityAxis {
    fn apply(self, cfg: &mut ScenarioConfig, value: f64) -> Result<()> {
        match self {
            SensitivityAxis::ErrorLevel => cfg.noise = super::NoiseLevels::uniform(value),
            SensitivityAxis::SnapshotFrequency => {
                if !(value >= 1.0 && value.fract() == 0.0 && value <= u32::MAX as f64) {
                    return Err(Error::Config(format!("snapshot spacing {value} is not a whole number of seconds")));
                }
                cfg.density.snapshot_every_s = value as u32;
            }
        }
        Ok(())
    }
}

/// Mean, min and max of one metric over replications.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub value: f64,
    pub stream: String,
    pub subset: String,
    pub replications: usize,
    pub r2_mean: Option<f64>,
    pub r2_min: Option<f64>,
    pub r2_max: Option<f64>,
    pub mae_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub axis: SensitivityAxis,
    pub rows: Vec<SensitivityRow>,
    /// `(value, replication, summary)` of every run.
    pub runs: Vec<(f64, usize, RunSummary)>,
}

impl SensitivityReport {
    pub fn row(&self, value: f64, stream: &str, subset: &str) -> Option<&SensitivityRow> {
        self.rows
            .iter()
            .find(|r| r.value == value && r.stream == stream && r.subset == subset)
    }
}

fn label(axis: SensitivityAxis, value: f64) -> String {
    match axis {
        SensitivityAxis::ErrorLevel => format!("error_level_{value}"),
        SensitivityAxis::SnapshotFrequency => format!("snapshot_{value}s"),
    }
}

/// Runs the scenario once per `(value, replication)`; replication `r` uses
/// scenario seed `cfg.seed + r`. Runs execute in parallel, each writing to
/// `<out_dir>/<value label>/rep_<r>`.
pub fn sensitivity_suite(
    cfg: &ScenarioConfig,
    axis: SensitivityAxis,
    values: &[f64],
    replications: usize,
) -> Result<SensitivityReport> {
    if replications == 0 {
        return Err(Error::Config("replications must be at least 1".into()));
    }
    if values.is_empty() {
        return Err(Error::Config("no sensitivity values given".into()));
    }
    let mut jobs = Vec::new();
    for &v in values {
        for r in 0..replications {
            let mut c = cfg.clone();
            axis.apply(&mut c, v)?;
            c.seed = cfg.seed.wrapping_add(r as u64);
            c.out_dir = cfg.out_dir.join(label(axis, v)).join(format!("rep_{r}"));
            c.name = format!("{}/{}/rep_{r}", cfg.name, label(axis, v));
            jobs.push((v, r, c));
        }
    }
    let runs: Vec<(f64, usize, RunSummary)> = jobs
        .into_par_iter()
        .map(|(v, r, c)| run_scenario(&c).map(|rep| (v, r, rep.summary)))
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for &v in values {
        let group: Vec<&RunSummary> = runs.iter().filter(|(x, _, _)| *x == v).map(|(_, _, s)| s).collect();
        let mut keys: BTreeMap<(String, String), Vec<MetricSummary>> = BTreeMap::new();
        for s in &group {
            for (stream, subs) in &s.metrics {
                for (subset, m) in subs {
                    keys.entry((stream.clone(), subset.clone())).or_default().push(*m);
                }
            }
        }
        for ((stream, subset), ms) in keys {
            let r2: Vec<f64> = ms.iter().filter_map(|m| m.r2).collect();
            let stat = |f: fn(&[f64]) -> f64| if r2.is_empty() { None } else { Some(f(&r2)) };
            rows.push(SensitivityRow {
                value: v,
                stream,
                subset,
                replications: ms.len(),
                r2_mean: stat(|x| x.iter().sum::<f64>() / x.len() as f64),
                r2_min: stat(|x| x.iter().copied().fold(f64::INFINITY, f64::min)),
                r2_max: stat(|x| x.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
                mae_mean: ms.iter().map(|m| m.mae).sum::<f64>() / ms.len() as f64,
            });
        }
    }
    let report = SensitivityReport { axis, rows, runs };
    write_sensitivity(&report, &cfg.out_dir)?;
    Ok(report)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_sensitivity(report: &SensitivityReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("sensitivity.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::csv(&path, e))?;
    w.write_record(["value", "stream", "subset", "replications", "r2_mean", "r2_min", "r2_max", "mae_mean"])
        .map_err(|e| Error::csv(&path, e))?;
    for r in &report.rows {
        w.write_record([
            r.value.to_string(),
            r.stream.clone(),
            r.subset.clone(),
            r.replications.to_string(),
            opt(r.r2_mean),
            opt(r.r2_min),
            opt(r.r2_max),
            r.mae_mean.to_string(),
        ])
        .map_err(|e| Error::csv(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::Config(e.to_string()))?;
    let jp = dir.join("sensitivity.json");
    fs::write(&jp, json + "\n").map_err(|e| Error::io(&jp, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    /// Loader runs available to each solver.
    pub budget: usize,
    pub cg: ConvergenceTrace,
    pub spsa: ConvergenceTrace,
    pub cg_metrics: BTreeMap<String, BTreeMap<String, MetricSummary>>,
    pub spsa_metrics: BTreeMap<String, BTreeMap<String, MetricSummary>>,
}

impl CompareReport {
    pub fn cg_normalized(&self) -> Vec<f64> {
        self.cg.normalized()
    }

    pub fn spsa_normalized(&self) -> Vec<f64> {
        self.spsa.normalized()
    }

    /// Loader runs consumed when each SPSA trace record was written.
    pub fn spsa_evaluations(&self) -> Vec<usize> {
        let n = self.spsa.records.len();
        (0..n)
            .map(|i| match i {
                0 => 1,
                i if i == n - 1 && n > 1 => 2 * (n - 2) + 2,
                i => 1 + 2 * i,
            })
            .collect()
    }
}

/// Runs the gradient solver and PC-SPSA from the same starting demand on
/// the same observations. The gradient solver gets `cfg.estimator.epochs`
/// loader runs; SPSA gets the same budget, spent as one initial and one
/// final evaluation plus two runs per iteration.
pub fn compare_solvers(cfg: &ScenarioConfig) -> Result<CompareReport> {
    let mut cfg = cfg.clone();
    if cfg.kind == ScenarioKind::CountsOnly {
        cfg.kind = ScenarioKind::CountsPlusDensity;
    }
    let budget = cfg.estimator.epochs;
    cfg.spsa.solver.iterations = budget.saturating_sub(2) / 2;
    let prep = prepare(&cfg)?;
    let (q_cg, cg) = solve(&cfg, &prep, ScenarioKind::CountsPlusDensity)?;
    let (q_sp, spsa) = solve(&cfg, &prep, ScenarioKind::PcSpsa)?;
    debug_assert!(cg.dnl_evaluations <= budget && spsa.dnl_evaluations <= budget.max(1));
    let cg_table: MetricTable = prep.evaluate(&cfg, &q_cg)?;
    let sp_table: MetricTable = prep.evaluate(&cfg, &q_sp)?;
    let report = CompareReport {
        budget,
        cg,
        spsa,
        cg_metrics: summarize(&cg_table),
        spsa_metrics: summarize(&sp_table),
    };
    write_compare(&report, &cfg.out_dir)?;
    Ok(report)
}

fn write_compare(report: &CompareReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("compare_trace.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::csv(&path, e))?;
    let e = |x| Error::csv(&path, x);
    w.write_record(["solver", "record", "dnl_evaluations", "normalized_loss"]).map_err(e)?;
    for (i, v) in report.cg_normalized().iter().enumerate() {
        w.write_record(["cg".to_string(), i.to_string(), (i + 1).to_string(), v.to_string()])
            .map_err(e)?;
    }
    for ((i, v), n) in report.spsa_normalized().iter().enumerate().zip(report.spsa_evaluations()) {
        w.write_record(["pc_spsa".to_string(), i.to_string(), n.to_string(), v.to_string()])
            .map_err(e)?;
    }
    w.flush().map_err(|x| Error::io(&path, x))?;

    let path = dir.join("compare_metrics.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::csv(&path, e))?;
    let e = |x| Error::csv(&path, x);
    w.write_record(["solver", "stream", "subset", "r2", "mae"]).map_err(e)?;
    for (solver, table) in [("cg", &report.cg_metrics), ("pc_spsa", &report.spsa_metrics)] {
        for (stream, subs) in table {
            for (subset, m) in subs {
                w.write_record([solver, stream, subset, &opt(m.r2), &m.mae.to_string()])
                    .map_err(e)?;
            }
        }
    }
    w.flush().map_err(|x| Error::io(&path, x))
}
