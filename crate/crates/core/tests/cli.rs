use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dode(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dode"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn synthetic_config_validates_runs_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    ok(&dode(&["gen-synthetic", "--out", "demo"], root));
    for f in ["links.csv", "od.csv", "truth.csv", "detections.csv", "scenario.toml"] {
        assert!(root.join("demo").join(f).is_file(), "{f} missing");
    }
    ok(&dode(&["validate", "demo/scenario.toml"], root));
    ok(&dode(&["run", "demo/scenario.toml", "--epochs", "2", "--out", "a"], root));
    ok(&dode(&["run", "a/summary.json", "--out", "b"], root));

    let est_a = fs::read_to_string(root.join("a/estimate.csv")).unwrap();
    let est_b = fs::read_to_string(root.join("b/estimate.csv")).unwrap();
    assert_eq!(est_a, est_b);
    let trace = fs::read_to_string(root.join("a/trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 2, "header plus two epochs");
}

#[test]
fn missing_config_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = dode(&["run", "nope.toml"], dir.path());
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
}

#[test]
fn grid_network_is_generated() {
    let dir = tempfile::tempdir().unwrap();
    ok(&dode(&["gen-synthetic", "--network", "grid", "--rows", "3", "--cols", "3", "--out", "g"], dir.path()));
    ok(&dode(&["validate", "g/scenario.toml"], dir.path()));
}
