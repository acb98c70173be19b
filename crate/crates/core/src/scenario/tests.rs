use super::*;
use crate::estimator::Stream;

fn quick(kind: ScenarioKind, dir: &Path) -> ScenarioConfig {
    let mut cfg = ScenarioConfig {
        kind,
        out_dir: dir.to_path_buf(),
        ..ScenarioConfig::default()
    };
    cfg.estimator.epochs = 3;
    cfg
}

#[test]
fn config_round_trips_through_toml() {
    let mut cfg = ScenarioConfig {
        kind: ScenarioKind::CountsPlusDensity,
        seed: 42,
        weights: Some((1.0, 0.5, 2.0)),
        ..ScenarioConfig::default()
    };
    cfg.density.snapshot_every_s = 1800;
    cfg.noise = NoiseLevels::uniform(0.2);
    let text = cfg.to_toml().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.toml");
    fs::write(&path, &text).unwrap();
    let back = ScenarioConfig::from_file(&path).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.hash(), cfg.hash());
}

#[test]
fn input_files_resolve_against_config_dir() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.toml");
    let text = "[network]\nkind = \"files\"\nlinks = \"links.csv\"\nod = \"/abs/od.csv\"\n\n[truth]\nfile = \"truth.csv\"\n";
    fs::write(&path, text).unwrap();
    let cfg = ScenarioConfig::from_file(&path).unwrap();
    match &cfg.network {
        NetworkSource::Files { links, od, .. } => {
            assert_eq!(links, &dir.path().join("links.csv"));
            assert_eq!(od, Path::new("/abs/od.csv"));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(cfg.truth.file, Some(dir.path().join("truth.csv")));
    assert_eq!(cfg.out_dir, Path::new("out"));
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.toml");
    fs::write(&path, "seed = 1\nbogus = 3\n").unwrap();
    assert!(matches!(ScenarioConfig::from_file(&path), Err(Error::Config(_)) | Err(Error::Parse { .. })));
}

#[test]
fn hash_tracks_content() {
    let a = ScenarioConfig::default();
    let mut b = a.clone();
    assert_eq!(a.hash(), b.hash());
    assert_eq!(a.hash().len(), 64);
    b.seed += 1;
    assert_ne!(a.hash(), b.hash());
}

#[test]
fn counts_and_times_only_on_observed_segments() {
    let cfg = ScenarioConfig {
        kind: ScenarioKind::CountsPlusDensity,
        ..ScenarioConfig::default()
    };
    let prep = prepare(&cfg).unwrap();
    assert_eq!(prep.observed.len(), cfg.observed_links);
    for s in [Stream::Count, Stream::Time] {
        let links = prep.obs.links_in(s);
        assert!(links.iter().all(|l| prep.observed.contains(l)), "{s:?} leaks onto unobserved links");
        assert!(links.iter().all(|l| !prep.unobserved.contains(l)));
    }
    let dens = prep.obs.links_in(Stream::Density);
    assert!(prep.unobserved.iter().all(|l| dens.contains(l)));
}

#[test]
fn observed_sample_depends_on_seed_only() {
    let a = prepare(&ScenarioConfig::default()).unwrap();
    let b = prepare(&ScenarioConfig::default()).unwrap();
    assert_eq!(a.observed, b.observed);
    assert_eq!(a.measurements.count, b.measurements.count);
    let c = prepare(&ScenarioConfig {
        seed: 2,
        ..ScenarioConfig::default()
    })
    .unwrap();
    assert_ne!(a.measurements.count, c.measurements.count);
}

#[test]
fn counts_only_has_no_density_rows() {
    let prep = prepare(&ScenarioConfig::default()).unwrap();
    assert!(prep.obs.density.is_empty());
    assert!(!prep.obs.count.is_empty());
}

#[test]
fn sparser_snapshots_halve_density_rows() {
    let mut cfg = ScenarioConfig {
        kind: ScenarioKind::CountsPlusDensity,
        ..ScenarioConfig::default()
    };
    let dense = prepare(&cfg).unwrap().obs.density.len();
    cfg.density.snapshot_every_s = 1800;
    assert_eq!(cfg.snapshot_intervals(), vec![0, 2, 4, 6, 8]);
    let sparse = prepare(&cfg).unwrap().obs.density.len();
    assert_eq!(dense, 2 * sparse);
}

#[test]
fn exact_truth_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick(ScenarioKind::CountsPlusDensity, dir.path());
    cfg.noise = NoiseLevels::uniform(0.0);
    cfg.density.source = DensitySource::Exact;
    cfg.init = InitKind::Truth;
    let rep = run_scenario(&cfg).unwrap();
    for stream in ["count", "time", "density"] {
        for subset in ["observed", "unobserved"] {
            let m = &rep.metrics[stream][subset];
            assert!(m.mae < 1e-9, "{stream}/{subset} mae {}", m.mae);
            if let Some(r2) = m.r2 {
                assert!((r2 - 1.0).abs() < 1e-12);
            }
        }
    }
    assert_eq!(rep.summary.demand_mae, [0.0, 0.0]);
}

#[test]
fn run_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick(ScenarioKind::CountsOnly, dir.path());
    let rep = run_scenario(&cfg).unwrap();
    for f in [
        "config.toml",
        "observations.csv",
        "truth.csv",
        "trace.csv",
        "estimate.csv",
        "metrics.csv",
        "summary.json",
    ] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    let text = fs::read_to_string(dir.path().join("summary.json")).unwrap();
    let back: RunSummary = serde_json::from_str(&text).unwrap();
    assert_eq!(back.config_hash, cfg.hash());
    assert_eq!(back.dnl_evaluations, rep.trace.dnl_evaluations);
    assert_eq!(back.observed_links.len(), cfg.observed_links);
}

#[test]
fn replay_from_summary_reproduces_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick(ScenarioKind::CountsOnly, &dir.path().join("a"));
    let first = run_scenario(&cfg).unwrap();
    let mut replay = ScenarioConfig::from_file(&dir.path().join("a").join("summary.json")).unwrap();
    replay.out_dir = dir.path().join("b");
    let second = run_scenario(&replay).unwrap();
    assert_eq!(first.estimate, second.estimate);
    assert_eq!(first.summary.metrics, second.summary.metrics);
}

#[test]
fn single_value_suite_matches_plain_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick(ScenarioKind::CountsOnly, dir.path());
    let rep = sensitivity_suite(&cfg, SensitivityAxis::ErrorLevel, &[0.1], 1).unwrap();
    let plain = run_scenario(&ScenarioConfig {
        out_dir: dir.path().join("plain"),
        ..cfg.clone()
    })
    .unwrap();
    assert_eq!(rep.runs.len(), 1);
    assert_eq!(rep.runs[0].2.metrics, plain.summary.metrics);
    let row = rep.row(0.1, "count", "observed").unwrap();
    assert_eq!(row.replications, 1);
    assert_eq!(row.r2_mean, plain.summary.metrics["count"]["observed"].r2);
    assert!(dir.path().join("sensitivity.csv").is_file());
}

#[test]
fn suite_rejects_bad_inputs() {
    let cfg = ScenarioConfig::default();
    assert!(sensitivity_suite(&cfg, SensitivityAxis::ErrorLevel, &[0.1], 0).is_err());
    assert!(sensitivity_suite(&cfg, SensitivityAxis::ErrorLevel, &[], 1).is_err());
    assert!(sensitivity_suite(&cfg, SensitivityAxis::SnapshotFrequency, &[12.5], 1).is_err());
    assert_eq!("error-level".parse::<SensitivityAxis>().unwrap(), SensitivityAxis::ErrorLevel);
    assert!("speed".parse::<SensitivityAxis>().is_err());
}

#[test]
fn compare_with_unit_budget_only_scores_start() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick(ScenarioKind::CountsOnly, dir.path());
    cfg.estimator.epochs = 1;
    let rep = compare_solvers(&cfg).unwrap();
    assert_eq!(rep.cg_normalized(), vec![1.0]);
    assert_eq!(rep.spsa_normalized()[0], 1.0);
    assert!(rep.cg.dnl_evaluations <= 1);
    assert!(dir.path().join("compare_trace.csv").is_file());
}

#[test]
fn compare_spends_equal_budgets() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick(ScenarioKind::CountsPlusDensity, dir.path());
    cfg.estimator.epochs = 8;
    let rep = compare_solvers(&cfg).unwrap();
    assert_eq!(rep.cg.dnl_evaluations, 8);
    assert_eq!(rep.spsa.dnl_evaluations, 8);
    assert_eq!(rep.spsa_evaluations().last(), Some(&8));
}
