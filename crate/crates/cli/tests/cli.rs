//! The `decision-engine` binary, end to end.

use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::sync::OnceLock;
use std::thread;
use std::time::{Duration, Instant};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_decision-engine"))
}

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

/// One full hybrid run, shared by the tests that only read its outputs.
fn hybrid() -> &'static (tempfile::TempDir, Output) {
    static RUN: OnceLock<(tempfile::TempDir, Output)> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let config = scenarios().join("engine.toml");
        let scenario = scenarios().join("hybrid_facility.toml");
        let out = run_in(
            dir.path(),
            &[
                "run",
                "--config",
                config.to_str().unwrap(),
                "--scenario",
                scenario.to_str().unwrap(),
                "--archive-dir",
                "archive",
                "--metrics-dir",
                "metrics",
            ],
        );
        (dir, out)
    })
}

#[test]
fn run_hybrid_writes_report() {
    let (dir, out) = hybrid();
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("1400 of 1400 completed"));
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["jobs_completed"], 1400);
    assert_eq!(report["outcome"], "completed");
    for key in ["peak_slots", "cloud_spend", "hpc_hours_used", "cycles"] {
        assert!(report.get(key).is_some(), "report lacks {key}");
    }
    assert!(report["cycles"]["provisioning"].as_u64().unwrap() > 0);
    assert_eq!(report["peak_slots"].as_object().unwrap().len(), 5);
}

fn broken_config(dir: &Path) -> PathBuf {
    let text = std::fs::read_to_string(scenarios().join("engine.toml")).unwrap();
    let cut = text.find("[[channels.sources]]\nname = \"accounting\"").unwrap();
    let end = cut + text[cut..].find("\n\n").unwrap();
    let mut broken = format!("{}{}", &text[..cut], &text[end + 2..]);
    broken = broken.replace("plugin = \"shortlist\"", "plugin = \"no_such_plugin\"");
    let path = dir.join("broken.toml");
    std::fs::write(&path, broken).unwrap();
    path
}

#[test]
fn invalid_config_exits_2_listing_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    let config = broken_config(dir.path());
    let scenario = scenarios().join("hybrid_facility.toml");
    let out =
        run_in(dir.path(), &["run", "--config", config.to_str().unwrap(), "--scenario", scenario.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = text(&out.stderr);
    assert!(err.contains("unproduced product `budget`") || err.contains("unproduced product budget"), "{err}");
    assert!(err.contains("no_such_plugin"), "{err}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn validate_only_creates_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let config = scenarios().join("engine.toml");
    let out = run_in(dir.path(), &["run", "--config", config.to_str().unwrap(), "--validate-only"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let broken = broken_config(dir.path());
    let out = run_in(dir.path(), &["run", "--config", broken.to_str().unwrap(), "--validate-only"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("budget"));
    let entries: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(entries, vec![std::ffi::OsString::from("broken.toml")]);
}

#[test]
fn short_duration_exits_3_with_residue() {
    let dir = tempfile::tempdir().unwrap();
    let config = scenarios().join("engine.toml");
    let scenario = scenarios().join("hybrid_facility.toml");
    let out = run_in(
        dir.path(),
        &["run", "--config", config.to_str().unwrap(), "--scenario", scenario.to_str().unwrap(), "--duration", "900"],
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(text(&out.stderr).contains("timeout"), "{}", text(&out.stderr));
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["outcome"], "timeout");
    let queued = report["jobs_queued"].as_u64().unwrap();
    let running = report["jobs_running"].as_u64().unwrap();
    let done = report["jobs_completed"].as_u64().unwrap();
    assert!(queued > 0);
    assert_eq!(queued + running + done, 1400);
}

#[test]
fn empty_scenario_exits_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("empty.toml");
    std::fs::write(
        &scenario,
        "name = \"empty\"\nseed = 1\nduration = 600\ninitial_funds = 0\ninitial_allocation = 0\n",
    )
    .unwrap();
    let config = scenarios().join("engine.toml");
    let out =
        run_in(dir.path(), &["run", "--config", config.to_str().unwrap(), "--scenario", scenario.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["requests_accepted"], 0);
    assert_eq!(report["requests_rejected"], 0);
    assert_eq!(report["cloud_spend"], 0.0);
}

fn inspect(args: &[&str]) -> Output {
    let (dir, _) = hybrid();
    let archive = dir.path().join("archive");
    let mut full = vec!["inspect", "--archive", archive.to_str().unwrap(), "--channel", "provisioning"];
    full.extend_from_slice(args);
    bin().args(&full).output().unwrap()
}

#[test]
fn inspect_generation_shows_provenance() {
    let out = inspect(&["--generation", "3"]);
    assert_eq!(out.status.code(), Some(0));
    let s = text(&out.stdout);
    assert!(s.contains("generation 3"), "{s}");
    let header = s.lines().find(|l| l.starts_with("product")).unwrap();
    assert!(header.contains("produced_by") && header.contains("source_gen"), "{header}");
    assert!(s.lines().any(|l| l.starts_with("budget ") && l.contains("accounting")));
}

#[test]
fn inspect_missing_generation_exits_1() {
    let out = inspect(&["--generation", "999999"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("generation not found"));
}

#[test]
fn budget_history_never_increases() {
    let out = inspect(&["--product", "budget", "--full"]);
    assert_eq!(out.status.code(), Some(0));
    let funds: Vec<f64> = text(&out.stdout)
        .lines()
        .skip(1)
        .map(|l| {
            let json = &l[l.find('{').unwrap()..];
            serde_json::from_str::<Value>(json).unwrap()["cloud_funds_remaining"].as_f64().unwrap()
        })
        .collect();
    assert!(funds.len() > 100);
    assert!(funds.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn inference_history_lists_rules_and_publishers() {
    let out = inspect(&["--product", "inference_result"]);
    let s = text(&out.stdout);
    assert!(
        s.lines()
            .nth(1)
            .unwrap()
            .contains("[monitor_always, provision_when_work] / [metrics_publisher, provision_publisher]"),
        "{s}"
    );
}

struct Live {
    child: Child,
    config: PathBuf,
    dir: tempfile::TempDir,
}

impl Drop for Live {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// A live engine with two provisioning channels, the second submitting to
/// the worker pool.
fn live() -> Live {
    let dir = tempfile::tempdir().unwrap();
    let base = std::fs::read_to_string(scenarios().join("engine.toml")).unwrap();
    let base = base.replace("source_period = 60 ", "source_period = 0.1");
    let channels_at = base.find("[[channels]]").unwrap();
    let shadow = base[channels_at..]
        .replace("id = \"provisioning\"", "id = \"shadow\"")
        .replace("plugin = \"provision\"", "plugin = \"provision\"\nparameters = { provisioner = \"worker_pool\" }");
    let config = dir.path().join("live.toml");
    std::fs::write(&config, format!("{base}\n{shadow}")).unwrap();
    let scenario = scenarios().join("hybrid_facility.toml");
    let child = bin()
        .current_dir(dir.path())
        .args(["run", "--live", "--speed", "600", "--duration", "60", "--config"])
        .arg(&config)
        .arg("--scenario")
        .arg(&scenario)
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let socket = dir.path().join("out/decision-engine.sock");
    let started = Instant::now();
    while !socket.exists() {
        assert!(started.elapsed() < Duration::from_secs(10), "control socket never appeared");
        thread::sleep(Duration::from_millis(20));
    }
    Live { child, config, dir }
}

fn channel(l: &Live, action: &str, id: &str) -> Output {
    bin().current_dir(l.dir.path()).arg("channel").arg("--config").arg(&l.config).args([action, id]).output().unwrap()
}

fn cycles(out: &Output) -> u64 {
    let s = text(&out.stdout);
    let at = s.find("cycles ").unwrap() + "cycles ".len();
    s[at..].split(|c: char| !c.is_ascii_digit()).next().unwrap().parse().unwrap()
}

#[test]
fn live_channels_are_controlled_independently() {
    let l = live();
    thread::sleep(Duration::from_millis(500));
    let status = channel(&l, "status", "provisioning");
    assert_eq!(status.status.code(), Some(0), "{}", text(&status.stderr));
    assert!(text(&status.stdout).starts_with("provisioning: steady"), "{}", text(&status.stdout));

    let down = channel(&l, "down", "provisioning");
    assert_eq!(down.status.code(), Some(0));
    assert!(text(&down.stdout).starts_with("provisioning: stopped"));
    let again = channel(&l, "down", "provisioning");
    assert_eq!(again.status.code(), Some(1));

    let before = cycles(&channel(&l, "status", "shadow"));
    let stopped_at = cycles(&channel(&l, "status", "provisioning"));
    thread::sleep(Duration::from_millis(600));
    let after = cycles(&channel(&l, "status", "shadow"));
    assert!(after > before, "shadow stalled at {before}");
    assert_eq!(cycles(&channel(&l, "status", "provisioning")), stopped_at);

    let up = channel(&l, "up", "provisioning");
    assert_eq!(up.status.code(), Some(0));
    let unknown = channel(&l, "status", "nope");
    assert_eq!(unknown.status.code(), Some(1));
    assert!(text(&unknown.stderr).contains("nope"));
}
