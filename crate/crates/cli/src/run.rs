//! `decision-engine run`: validate, then co-simulate or run live.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use anyhow::Context;
use clap::Args;
use decision_engine::clock::SystemClock;
use decision_engine::config::{load_config, validate_config, EngineConfig, RunMode};
use decision_engine::sim::{
    run_scenario, sim_registry, FacilitySim, RunOptions, RunReport, SharedSim, SimError, SimScenario,
};
use decision_engine::{DataSpace, Engine};
use parking_lot::Mutex;

use crate::control::{describe, ControlServer};

pub const EXIT_INVALID: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

#[derive(Args)]
pub struct RunArgs {
    /// Engine configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Facility scenario to run the channels against.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Stop after this many seconds: simulated seconds by default, wall
    /// seconds with --live.
    #[arg(long)]
    duration: Option<f64>,
    /// Overrides `archive_dir` from the configuration.
    #[arg(long)]
    archive_dir: Option<PathBuf>,
    /// Overrides `metrics_dir` from the configuration.
    #[arg(long)]
    metrics_dir: Option<PathBuf>,
    /// Where to write the run report.
    #[arg(long, default_value = "report.json")]
    report: PathBuf,
    /// Check the configuration and exit: 0 if valid, 1 with the problems on
    /// standard error otherwise.
    #[arg(long)]
    validate_only: bool,
    /// Run channels on their own threads against the wall clock and accept
    /// lifecycle commands on the control socket.
    #[arg(long)]
    live: bool,
    /// With --live, simulated facility seconds per wall second.
    #[arg(long, default_value_t = 1.0)]
    speed: f64,
}

/// Facility with no providers and no jobs, for validating without a scenario.
fn empty_scenario() -> SimScenario {
    SimScenario {
        name: "empty".into(),
        seed: 0,
        duration: 0.0,
        idle_timeout: 300.0,
        initial_funds: 0.0,
        initial_allocation: 0.0,
        providers: Vec::new(),
        job_waves: Vec::new(),
    }
}

pub fn run(args: RunArgs) -> u8 {
    let invalid = if args.validate_only { 1 } else { EXIT_INVALID };
    let config = match load_config(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return invalid;
        }
    };
    let scenario = match &args.scenario {
        Some(p) => match SimScenario::load(p) {
            Ok(s) => Some(s),
            Err(e) => {
                eprintln!("{e}");
                return invalid;
            }
        },
        None => None,
    };

    // Instantiating plugins for validation touches no files.
    let probe: SharedSim = Arc::new(Mutex::new(FacilitySim::new(scenario.clone().unwrap_or_else(empty_scenario))));
    if let Err(issues) = validate_config(&config, &sim_registry(&probe, &config.metrics_dir)) {
        eprintln!("invalid configuration ({} problems):", issues.len());
        for i in &issues {
            eprintln!("  {i}");
        }
        return invalid;
    }
    if args.validate_only {
        println!("{}: ok ({} channels)", args.config.display(), config.channels.len());
        return 0;
    }
    let Some(scenario) = scenario else {
        eprintln!("a --scenario is required to run: the facility simulator provides the queue, manifest, budget and provisioner endpoints");
        return EXIT_INVALID;
    };

    let options = RunOptions {
        archive_dir: args.archive_dir.clone(),
        metrics_dir: args.metrics_dir.clone(),
        duration: args.duration,
    };
    let result = if args.live {
        run_live(&scenario, &config, &options, args.speed).map_err(|e| {
            eprintln!("error: {e:#}");
        })
    } else {
        match run_scenario(&scenario, &config, &options) {
            Ok(r) => Ok(r),
            Err(SimError::Timeout(r)) => Ok(*r),
            Err(e) => {
                eprintln!("error: {e}");
                Err(())
            }
        }
    };
    let Ok(report) = result else { return EXIT_RUNTIME };

    print!("{}", format_report(&report));
    if let Err(e) = write_report(&args.report, &report) {
        eprintln!("error: {e:#}");
        return EXIT_RUNTIME;
    }
    if report.outcome == "completed" {
        0
    } else {
        eprintln!(
            "timeout: {} jobs still queued, {} running, {} of {} completed",
            report.jobs_queued, report.jobs_running, report.jobs_completed, report.jobs_total
        );
        EXIT_RUNTIME
    }
}

fn write_report(path: &Path, report: &RunReport) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let text = serde_json::to_string_pretty(report)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn run_live(
    scenario: &SimScenario,
    config: &EngineConfig,
    options: &RunOptions,
    speed: f64,
) -> anyhow::Result<RunReport> {
    anyhow::ensure!(speed.is_finite() && speed > 0.0, "--speed must be positive");
    let archive_dir = options.archive_dir.clone().unwrap_or_else(|| config.archive_dir.clone());
    let metrics_dir = options.metrics_dir.clone().unwrap_or_else(|| config.metrics_dir.clone());
    let sim: SharedSim = Arc::new(Mutex::new(FacilitySim::new(scenario.clone())));
    let registry = sim_registry(&sim, &metrics_dir);
    let dataspace = DataSpace::with_archive_dir(Arc::new(SystemClock), &archive_dir);
    let engine = Arc::new(Engine::build(config, &registry, dataspace, RunMode::Live)?);
    let server = ControlServer::bind(&config.control_socket, engine.clone())?;
    engine.start_all()?;
    log::info!("live: control socket {}", config.control_socket.display());

    let started = Instant::now();
    let limit = options.duration.map(Duration::from_secs_f64);
    loop {
        thread::sleep(Duration::from_millis(50));
        let elapsed = started.elapsed();
        let mut s = sim.lock();
        s.advance_to((elapsed.as_secs_f64() * speed * 1000.0) as u64);
        if s.all_done() || limit.is_some_and(|l| elapsed >= l) {
            break;
        }
    }
    drop(server);
    engine.stop_all();
    for id in engine.channel_ids() {
        if let Ok(status) = engine.status(id) {
            log::info!("{}", describe(&status));
        }
    }
    let channels: Vec<_> = engine.channels().cloned().collect();
    let s = sim.lock();
    let seconds = s.now_ms() as f64 / 1000.0;
    Ok(RunReport::collect(&s, &channels, seconds, metrics_dir, archive_dir))
}

pub fn format_report(r: &RunReport) -> String {
    let mut out = String::new();
    let mut line = |s: String| {
        out.push_str(&s);
        out.push('\n');
    };
    line(format!("scenario        {} (seed {})", r.scenario, r.seed));
    line(format!("outcome         {} after {:.0} simulated s", r.outcome, r.sim_seconds));
    line(format!(
        "jobs            {} of {} completed, {} queued, {} running, {} requeued",
        r.jobs_completed, r.jobs_total, r.jobs_queued, r.jobs_running, r.jobs_requeued
    ));
    line(format!("cloud spend     {:.2} of {:.2}", r.cloud_spend, r.initial_funds));
    line(format!("hpc hours       {:.2} of {:.2}", r.hpc_hours_used, r.initial_allocation));
    line(format!("requests        {} accepted, {} rejected", r.requests_accepted, r.requests_rejected));
    line("class           peak slots   slot hours".into());
    for (class, peak) in &r.peak_slots {
        let hours = r.slot_hours.get(class).copied().unwrap_or(0.0);
        line(format!("  {class:<14}{peak:>10}   {hours:>10.2}"));
    }
    line("channel         cycles   state".into());
    for (ch, cycles) in &r.cycles {
        let state = r.channel_states.get(ch).map(String::as_str).unwrap_or("?");
        line(format!("  {ch:<14}{cycles:>6}   {state}"));
    }
    line(format!("archive         {}", r.archive_dir.display()));
    line(format!("metrics         {}", r.metrics_dir.display()));
    out
}
