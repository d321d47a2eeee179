use std::path::{Path, PathBuf};
use std::process::Command;

use fpi_core::bench::ExperimentReport;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fpi-bench"))
}

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.json")
}

#[test]
fn missing_config_exits_2() {
    let out = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["reconstruct", "--config", "/nonexistent/config.json", "--out"])
        .arg(out.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    let mut v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(smoke_config()).unwrap()).unwrap();
    v["max_iterations"] = serde_json::json!(0);
    std::fs::write(&bad, v.to_string()).unwrap();
    let status = bin().arg("consistency").arg("--config").arg(&bad).arg("--out").arg(dir.path()).status().unwrap();
    assert_eq!(status.code(), Some(2));

    std::fs::write(&bad, r#"{"scenario": "x", "no_such_field": 1}"#).unwrap();
    let status = bin().arg("consistency").arg("--config").arg(&bad).arg("--out").arg(dir.path()).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn reconstruct_writes_expected_report() {
    let out = tempfile::tempdir().unwrap();
    let status = bin()
        .arg("reconstruct")
        .arg("--config")
        .arg(smoke_config())
        .arg("--out")
        .arg(out.path())
        .args(["--seed", "5", "--plots"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    for f in ["reconstruct.csv", "reconstruct.json", "reconstruct.svg"] {
        assert!(out.path().join(f).exists(), "{f} missing");
    }

    let cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(smoke_config()).unwrap()).unwrap();
    let trials = cfg["num_trials"].as_u64().unwrap() as usize;
    let scales = cfg["guidance"]["sweep"].as_array().unwrap().len();
    let rows = ExperimentReport::read_csv(std::fs::File::open(out.path().join("reconstruct.csv")).unwrap()).unwrap();
    // five metrics for each trial, method and guidance scale
    assert_eq!(rows.len(), trials * scales * 3 * 5);

    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("reconstruct.json")).unwrap()).unwrap();
    assert_eq!(json["rng_seed"], 5);
    let hash = json["config_hash"].as_str().unwrap();
    assert_eq!(hash.len(), 64);
    let json_rows = json["rows"].as_array().unwrap();
    assert_eq!(json_rows.len(), rows.len());
    for key in ["scenario", "method", "guidance", "metric", "value", "trial", "wall_time_s", "config_hash"] {
        assert!(json_rows[0].get(key).is_some(), "row lacks {key}");
    }
    assert!(json_rows.iter().all(|r| r["config_hash"] == hash));
    assert!(json["summary"].as_array().is_some_and(|s| !s.is_empty()));
    assert!(json["failed_trials"].as_array().is_some_and(|f| f.is_empty()));
}

#[test]
fn seed_override_changes_results() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, seed) in [(&a, "1"), (&b, "2")] {
        let status = bin()
            .arg("interpolate")
            .arg("--config")
            .arg(smoke_config())
            .arg("--out")
            .arg(dir.path())
            .args(["--seed", seed])
            .status()
            .unwrap();
        assert!(status.success());
    }
    let read = |d: &tempfile::TempDir| {
        ExperimentReport::read_csv(std::fs::File::open(d.path().join("interpolate.csv")).unwrap())
            .unwrap()
            .into_iter()
            .map(|r| r.value.0)
            .collect::<Vec<_>>()
    };
    assert_ne!(read(&a), read(&b));
}
