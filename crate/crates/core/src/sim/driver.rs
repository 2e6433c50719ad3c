//! Co-simulation: the facility and the engine advance together on one
//! simulated clock.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::adapters::{sim_endpoints, SharedSim};
use super::facility::FacilitySim;
use super::scenario::SimScenario;
use crate::channel::{Channel, Engine, EngineError, PluginRegistry};
use crate::clock::{ManualClock, Timestamp, SIM_EPOCH};
use crate::config::{EngineConfig, RunMode};
use crate::dataspace::DataSpace;
use crate::stdlib;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides the engine config's archive directory.
    pub archive_dir: Option<PathBuf>,
    /// Overrides the engine config's metrics directory.
    pub metrics_dir: Option<PathBuf>,
    /// Overrides the scenario's duration, in seconds.
    pub duration: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    /// `completed` or `timeout`.
    pub outcome: String,
    pub sim_seconds: f64,
    pub jobs_total: u64,
    pub jobs_completed: u64,
    pub jobs_queued: u64,
    pub jobs_running: u64,
    pub jobs_requeued: u64,
    pub peak_slots: BTreeMap<String, u64>,
    pub slot_hours: BTreeMap<String, f64>,
    pub cloud_spend: f64,
    pub hpc_hours_used: f64,
    pub initial_funds: f64,
    pub initial_allocation: f64,
    pub requests_accepted: u64,
    pub requests_rejected: u64,
    /// Archived cycles per channel.
    pub cycles: BTreeMap<String, u64>,
    pub channel_states: BTreeMap<String, String>,
    pub metrics_dir: PathBuf,
    pub archive_dir: PathBuf,
}

impl RunReport {
    /// Summarize the facility and channels as they stand now.
    pub fn collect(
        sim: &FacilitySim,
        channels: &[Arc<Channel>],
        sim_seconds: f64,
        metrics_dir: PathBuf,
        archive_dir: PathBuf,
    ) -> Self {
        let scenario = sim.scenario();
        let counts = sim.counts();
        let (accepted, rejected) = sim.receipts();
        RunReport {
            scenario: scenario.name.clone(),
            seed: scenario.seed,
            outcome: if sim.all_done() { "completed" } else { "timeout" }.into(),
            sim_seconds,
            jobs_total: counts.total,
            jobs_completed: counts.completed,
            jobs_queued: counts.queued + (counts.total - counts.released),
            jobs_running: counts.running,
            jobs_requeued: counts.requeued,
            peak_slots: sim.peak_slots(),
            slot_hours: sim.ledger().slot_hours.clone(),
            cloud_spend: sim.ledger().cloud_spend,
            hpc_hours_used: sim.ledger().hpc_hours_used,
            initial_funds: scenario.initial_funds,
            initial_allocation: scenario.initial_allocation,
            requests_accepted: accepted,
            requests_rejected: rejected,
            cycles: channels.iter().map(|c| (c.id().to_string(), c.space().archive_len() as u64)).collect(),
            channel_states: channels.iter().map(|c| (c.id().to_string(), c.state().to_string())).collect(),
            metrics_dir,
            archive_dir,
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(
        "timeout after {} s: {} jobs queued, {} running, {} of {} completed",
        .0.sim_seconds, .0.jobs_queued, .0.jobs_running, .0.jobs_completed, .0.jobs_total
    )]
    Timeout(Box<RunReport>),
}

/// Registry with the stdlib plugins bound to `sim`.
pub fn sim_registry(sim: &SharedSim, metrics_dir: &std::path::Path) -> PluginRegistry {
    let mut r = PluginRegistry::new();
    stdlib::register(&mut r, sim_endpoints(sim, metrics_dir));
    r
}

struct Due {
    channel: usize,
    feed: usize,
    period: u64,
    next: u64,
}

/// Run `scenario` against the channels in `config` until every job is done
/// or the duration runs out.
///
/// Each step advances the facility to the earliest due source, runs every
/// source due at that instant (in configuration order), then lets each
/// channel run the cycles its triggers asked for.
pub fn run_scenario(
    scenario: &SimScenario,
    config: &EngineConfig,
    options: &RunOptions,
) -> Result<RunReport, SimError> {
    let archive_dir = options.archive_dir.clone().unwrap_or_else(|| config.archive_dir.clone());
    let metrics_dir = options.metrics_dir.clone().unwrap_or_else(|| config.metrics_dir.clone());
    let duration_ms = (options.duration.unwrap_or(scenario.duration) * 1000.0).round() as u64;

    let clock = Arc::new(ManualClock::new(SIM_EPOCH));
    let sim: SharedSim = Arc::new(Mutex::new(FacilitySim::new(scenario.clone())));
    let registry = sim_registry(&sim, &metrics_dir);
    let dataspace = DataSpace::with_archive_dir(clock.clone(), &archive_dir);
    let engine = Engine::build(config, &registry, dataspace, RunMode::Simulated)?;
    let channels: Vec<_> = engine.channels().cloned().collect();

    let mut due = Vec::new();
    for (ci, ch) in channels.iter().enumerate() {
        for (fi, (_, period)) in ch.feeds().into_iter().enumerate() {
            due.push(Due { channel: ci, feed: fi, period: period.as_millis().max(1) as u64, next: 0 });
        }
    }

    let mut now = 0u64;
    while let Some(t) = due.iter().map(|d| d.next).min() {
        if t > duration_ms {
            break;
        }
        sim.lock().advance_to(t);
        now = t;
        clock.set(Timestamp(SIM_EPOCH.millis() + t as i64));
        for d in due.iter_mut().filter(|d| d.next == t) {
            channels[d.channel].run_feed(d.feed);
            d.next += d.period;
        }
        for ch in &channels {
            ch.check_boot_deadline();
            ch.poll();
        }
        if sim.lock().all_done() {
            break;
        }
    }
    if !sim.lock().all_done() && now < duration_ms {
        sim.lock().advance_to(duration_ms);
        now = duration_ms;
    }

    let s = sim.lock();
    let report = RunReport::collect(&s, &channels, now as f64 / 1000.0, metrics_dir, archive_dir);
    if s.all_done() {
        Ok(report)
    } else {
        Err(SimError::Timeout(Box::new(report)))
    }
}
