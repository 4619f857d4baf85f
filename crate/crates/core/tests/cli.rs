mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::scenario;

fn replan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_replan"))
        .args(args)
        .output()
        .expect("binary runs")
}

/// Writes a short copy of `name` into `dir` and returns its path.
fn short_scenario(dir: &Path, name: &str, duration: f64) -> String {
    let mut sc = scenario(name);
    sc.duration = duration;
    let path = dir.join(format!("{name}.json"));
    std::fs::write(&path, sc.to_json()).unwrap();
    path.to_str().unwrap().to_string()
}

fn run_files(dir: &Path) -> bool {
    ["ticks.csv", "solves.csv", "summary.json"]
        .iter()
        .all(|f| dir.join(f).is_file())
}

#[test]
fn validate_accepts_the_shipped_scenarios() {
    for name in [
        "drone_cluttered",
        "truck_straight",
        "truck_parking",
        "truck_corridor_switch",
    ] {
        let path = common::scenario_path(name);
        let out = replan(&["validate", "--scenario", path.to_str().unwrap(), "--scheme", "asap"]);
        assert_eq!(
            out.status.code(),
            Some(0),
            "{name}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(v["valid"], true);
        assert_eq!(v["scenario"], name);
    }
}

#[test]
fn validation_errors_name_the_offending_fields() {
    let dir = tempfile::tempdir().unwrap();
    let mut sc = scenario("truck_straight");
    sc.scheme.delta = Some(0.3);
    let path = dir.path().join("bad.json");
    std::fs::write(&path, sc.to_json()).unwrap();
    let out = replan(&["validate", "--scenario", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "validation");
    let fields: Vec<&str> = err["fields"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f.as_str().unwrap())
        .collect();
    assert!(fields.contains(&"scheme.delta"), "{fields:?}");

    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, "{\"name\": 3}").unwrap();
    assert_eq!(
        replan(&["validate", "--scenario", broken.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn wall_clock_is_refused_for_other_schemes() {
    let dir = tempfile::tempdir().unwrap();
    let path = short_scenario(dir.path(), "truck_straight", 0.5);
    let out_dir = dir.path().join("out");
    let out = replan(&[
        "run",
        "--scenario",
        &path,
        "--scheme",
        "lur",
        "--wall-clock",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(64));
}

#[test]
fn run_writes_the_three_output_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = short_scenario(dir.path(), "truck_straight", 1.0);
    let out_dir = dir.path().join("run");
    let out = replan(&[
        "run",
        "--scenario",
        &path,
        "--scheme",
        "lur",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run_files(&out_dir));
    let ticks = std::fs::read_to_string(out_dir.join("ticks.csv")).unwrap();
    // Header plus one row per tick on [0, 1] s.
    assert_eq!(ticks.lines().count(), 1 + 51);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("lur"));
}

#[test]
fn sweep_over_m_writes_one_directory_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let path = short_scenario(dir.path(), "truck_straight", 1.0);
    let out_dir = dir.path().join("sweep");
    let out = replan(&[
        "sweep",
        "--scenario",
        &path,
        "--m",
        "5,10,20",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for m in [5, 10, 20] {
        assert!(run_files(&out_dir.join(format!("m_{m}"))), "m = {m}");
    }
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 3);

    let both = replan(&[
        "sweep",
        "--scenario",
        &path,
        "--m",
        "5",
        "--delay",
        "0.1",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(both.status.code(), Some(64));
}

#[test]
fn compare_reports_every_scheme() {
    let dir = tempfile::tempdir().unwrap();
    let path = short_scenario(dir.path(), "truck_straight", 1.0);
    let out_dir = dir.path().join("cmp");
    let out = replan(&["compare", "--scenario", &path, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("compare.json")).unwrap()).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 4);
    for name in ["fur", "lur", "asap", "naive_stitch"] {
        assert!(run_files(&out_dir.join(name)), "{name}");
    }
}
