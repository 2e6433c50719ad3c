use std::path::PathBuf;

use decision_engine::config::load_config;
use decision_engine::sim::{run_scenario, RunOptions, SimScenario};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn run(name: &str) -> decision_engine::RunReport {
    let dir = tempfile::tempdir().unwrap();
    let scenario = SimScenario::load(root().join(format!("scenarios/{name}.toml"))).unwrap();
    let config = load_config(root().join("scenarios/engine.toml")).unwrap();
    let opts = RunOptions {
        archive_dir: Some(dir.path().join("archive")),
        metrics_dir: Some(dir.path().join("metrics")),
        duration: None,
    };
    let report = run_scenario(&scenario, &config, &opts).unwrap_or_else(|e| panic!("{e}"));
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
    report
}

#[test]
fn hybrid_facility_completes() {
    let r = run("hybrid_facility");
    assert_eq!(r.jobs_completed, 1400);
}

#[test]
fn zero_funds_completes_without_cloud() {
    let r = run("zero_funds");
    assert_eq!(r.jobs_completed, 1400);
    assert_eq!(r.peak_slots["aws_zone1"], 0);
}
