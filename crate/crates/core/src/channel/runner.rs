//! A decision channel: its modules, boot gating and the decision cycle.

use std::collections::{BTreeMap, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicU32, AtomicU64, AtomicUsize, Ordering};

use std::time::{Duration, Instant};

use parking_lot::Mutex;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use super::plugin::{Inputs, InvokeContext, Module, ModuleError, ModuleSpec, PluginError, PluginRegistry};
use super::proxy::{resolve_source_proxy, ProxyError};
use super::trigger::{TriggerCell, TriggerEffect};
use crate::clock::Timestamp;
use crate::config::{
    transform_order, validate_config, ChannelConfig, EngineConfig, Problem, SourceProxyBinding, CYCLE_ERROR,
};
use crate::dataspace::{
    CycleOutcomeKind, DataBlockView, DataProduct, DataSpace, GenerationId, SpaceError, SpaceHandle,
};
use crate::logic::{self, run_inference, DependencyPlan, RunInferenceError};

/// Consecutive source failures after which the channel gives up.
pub const SOURCE_FAILURE_BUDGET: u32 = 5;
const DIAGNOSTIC_CAPACITY: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelState {
    Boot,
    Steady,
    Cycling,
    Stopping,
    Stopped,
    Failed,
}

impl ChannelState {
    pub fn as_str(self) -> &'static str {
        match self {
            ChannelState::Boot => "boot",
            ChannelState::Steady => "steady",
            ChannelState::Cycling => "cycling",
            ChannelState::Stopping => "stopping",
            ChannelState::Stopped => "stopped",
            ChannelState::Failed => "failed",
        }
    }

    fn accepts_feeds(self) -> bool {
        matches!(self, ChannelState::Boot | ChannelState::Steady | ChannelState::Cycling)
    }
}

impl std::fmt::Display for ChannelState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleOutcome {
    pub channel: String,
    pub generation: GenerationId,
    pub outcome: CycleOutcomeKind,
    pub fired_rules: Vec<String>,
    pub publishers_run: Vec<String>,
    #[serde(rename = "duration_ms")]
    #[serde(serialize_with = "duration_ms")]
    pub duration: Duration,
    pub error: Option<String>,
}

fn duration_ms<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64() * 1000.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Debug,
    Info,
    Warn,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub at: Timestamp,
    pub level: Level,
    pub module: String,
    pub event: String,
    pub detail: String,
}

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("channel `{channel}`, module `{module}`: {source}")]
    Plugin { channel: String, module: String, source: PluginError },
    #[error("channel `{channel}`: {message}")]
    Invalid { channel: String, message: String },
    #[error("channel `{channel}`: source proxy `{proxy}` reads unknown channel `{target}`")]
    UnknownChannel { channel: String, proxy: String, target: String },
    #[error(transparent)]
    Space(#[from] SpaceError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CycleError {
    #[error("channel `{0}` is not steady ({1})")]
    NotSteady(String, ChannelState),
    #[error("channel `{0}` already has a cycle in flight")]
    CycleInFlight(String),
    #[error(transparent)]
    Space(#[from] SpaceError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeedRun {
    /// Products landed in the open block; a cycle trigger followed.
    Delivered {
        generation: GenerationId,
        products: Vec<String>,
        trigger: TriggerEffect,
    },
    /// Ran but had nothing to contribute this round.
    Nothing,
    Failed(String),
    /// The channel is not accepting feed results.
    Skipped,
}

#[derive(Debug, Clone)]
pub struct ChannelOptions {
    pub boot_timeout: Duration,
    pub default_period: Duration,
}

impl Default for ChannelOptions {
    fn default() -> Self {
        ChannelOptions { boot_timeout: Duration::from_secs(120), default_period: Duration::from_secs(10) }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ChannelStats {
    pub cycles: u64,
    pub feed_runs: u64,
    pub feed_failures: u64,
    pub triggers: u64,
    pub coalesced: u64,
    pub max_in_flight: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChannelStatus {
    pub channel: String,
    pub state: ChannelState,
    pub open_generation: GenerationId,
    pub cycles: u64,
    pub last_outcome: Option<CycleOutcome>,
}

enum FeedKind {
    Source { spec: ModuleSpec, module: Mutex<Box<dyn Module>> },
    Proxy { binding: SourceProxyBinding, last: Mutex<Option<(String, GenerationId)>> },
}

struct Feed {
    name: String,
    period: Duration,
    kind: FeedKind,
    delivered: AtomicBool,
    failures: AtomicU32,
}

struct Stage {
    spec: ModuleSpec,
    module: Mutex<Box<dyn Module>>,
}

/// One decision channel. Shared between the threads that drive it.
pub struct Channel {
    id: String,
    dataspace: DataSpace,
    space: SpaceHandle,
    feeds: Vec<Feed>,
    transforms: Vec<Stage>,
    plan: DependencyPlan,
    publishers: BTreeMap<String, Stage>,
    state: Mutex<ChannelState>,
    trigger: TriggerCell,
    boot_started: Mutex<Timestamp>,
    boot_timeout: Duration,
    last_outcome: Mutex<Option<CycleOutcome>>,
    diagnostics: Mutex<VecDeque<Diagnostic>>,
    cycles: AtomicU64,
    feed_runs: AtomicU64,
    feed_failures: AtomicU64,
    triggers: AtomicU64,
    coalesced: AtomicU64,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
}

impl std::fmt::Debug for Channel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Channel").field("id", &self.id).field("state", &self.state()).finish()
    }
}

fn invoke_guarded(
    module: &Mutex<Box<dyn Module>>,
    ctx: &InvokeContext,
    inputs: &Inputs,
) -> Result<BTreeMap<String, Value>, String> {
    let mut m = module.lock();
    match catch_unwind(AssertUnwindSafe(|| m.invoke(ctx, inputs))) {
        Ok(Ok(out)) => Ok(out),
        Ok(Err(e)) => Err(e.to_string()),
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            Err(format!("panicked: {msg}"))
        }
    }
}

/// Instantiate every module of `config` and bind the channel to its space in
/// `dataspace` (created if it does not exist yet). Proxy targets must already
/// have spaces.
pub fn assemble_channel(
    config: &ChannelConfig,
    registry: &PluginRegistry,
    dataspace: &DataSpace,
    options: &ChannelOptions,
) -> Result<Channel, AssemblyError> {
    let id = config.channel_id.clone();
    let instantiate = |spec: &ModuleSpec| {
        registry.instantiate(spec).map_err(|source| AssemblyError::Plugin {
            channel: id.clone(),
            module: spec.name.clone(),
            source,
        })
    };
    let invalid = |message: String| AssemblyError::Invalid { channel: id.clone(), message };

    // Proxy targets are checked against the live data space and plugins are
    // reported by instantiation below, so only composition problems count here.
    let single = EngineConfig { channels: vec![config.clone()], ..EngineConfig::default() };
    if let Err(issues) = validate_config(&single, registry) {
        let problems: Vec<String> = issues
            .iter()
            .filter(|i| !matches!(i.problem, Problem::BadProxy(_) | Problem::Plugin(_)))
            .map(|i| i.to_string())
            .collect();
        if !problems.is_empty() {
            return Err(invalid(problems.join("; ")));
        }
    }

    let mut feeds = Vec::new();
    for spec in &config.sources {
        feeds.push(Feed {
            name: spec.name.clone(),
            period: spec.period.unwrap_or(options.default_period),
            kind: FeedKind::Source { module: Mutex::new(instantiate(spec)?), spec: spec.clone() },
            delivered: AtomicBool::new(false),
            failures: AtomicU32::new(0),
        });
    }
    for b in &config.source_proxies {
        if b.source_channel == id {
            return Err(invalid(format!("source proxy `{}` reads its own channel", b.name)));
        }
        if !dataspace.contains(&b.source_channel) {
            return Err(AssemblyError::UnknownChannel {
                channel: id.clone(),
                proxy: b.name.clone(),
                target: b.source_channel.clone(),
            });
        }
        feeds.push(Feed {
            name: b.name.clone(),
            period: b.period.unwrap_or(options.default_period),
            kind: FeedKind::Proxy { binding: b.clone(), last: Mutex::new(None) },
            delivered: AtomicBool::new(false),
            failures: AtomicU32::new(0),
        });
    }

    let order = transform_order(&config.transforms)
        .map_err(|cycle| invalid(format!("transform dependency cycle: {}", cycle.join(" -> "))))?;
    let mut transforms = Vec::new();
    for name in order {
        let spec = config.transforms.iter().find(|t| t.name == name).expect("ordered transform exists");
        transforms.push(Stage { module: Mutex::new(instantiate(spec)?), spec: spec.clone() });
    }
    let mut publishers = BTreeMap::new();
    for spec in &config.publishers {
        publishers.insert(spec.name.clone(), Stage { module: Mutex::new(instantiate(spec)?), spec: spec.clone() });
    }

    let plan = logic::validate(&config.facts, &config.rules)
        .map_err(|errs| invalid(errs.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; ")))?;

    let space = if dataspace.contains(&id) { dataspace.handle(&id)? } else { dataspace.create_space(&id)? };
    let now = dataspace.clock().now();
    Ok(Channel {
        id,
        dataspace: dataspace.clone(),
        space,
        feeds,
        transforms,
        plan,
        publishers,
        state: Mutex::new(ChannelState::Boot),
        trigger: TriggerCell::new(),
        boot_started: Mutex::new(now),
        boot_timeout: options.boot_timeout,
        last_outcome: Mutex::new(None),
        diagnostics: Mutex::new(VecDeque::new()),
        cycles: AtomicU64::new(0),
        feed_runs: AtomicU64::new(0),
        feed_failures: AtomicU64::new(0),
        triggers: AtomicU64::new(0),
        coalesced: AtomicU64::new(0),
        in_flight: AtomicUsize::new(0),
        max_in_flight: AtomicUsize::new(0),
    })
}

/// Why a cycle stopped early.
struct StageFailure {
    kind: CycleOutcomeKind,
    module: String,
    message: String,
}

impl Channel {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn space(&self) -> &SpaceHandle {
        &self.space
    }

    pub fn plan(&self) -> &DependencyPlan {
        &self.plan
    }

    pub fn trigger_cell(&self) -> &TriggerCell {
        &self.trigger
    }

    pub fn state(&self) -> ChannelState {
        *self.state.lock()
    }

    pub fn transform_order(&self) -> Vec<&str> {
        self.transforms.iter().map(|t| t.spec.name.as_str()).collect()
    }

    /// Sources and proxies with their periods, in configuration order.
    pub fn feeds(&self) -> Vec<(String, Duration)> {
        self.feeds.iter().map(|f| (f.name.clone(), f.period)).collect()
    }

    /// Feeds that have not yet delivered since boot began.
    pub fn unsatisfied_feeds(&self) -> Vec<String> {
        self.feeds.iter().filter(|f| !f.delivered.load(Ordering::SeqCst)).map(|f| f.name.clone()).collect()
    }

    pub fn last_outcome(&self) -> Option<CycleOutcome> {
        self.last_outcome.lock().clone()
    }

    pub fn diagnostics(&self) -> Vec<Diagnostic> {
        self.diagnostics.lock().iter().cloned().collect()
    }

    pub fn stats(&self) -> ChannelStats {
        ChannelStats {
            cycles: self.cycles.load(Ordering::SeqCst),
            feed_runs: self.feed_runs.load(Ordering::SeqCst),
            feed_failures: self.feed_failures.load(Ordering::SeqCst),
            triggers: self.triggers.load(Ordering::SeqCst),
            coalesced: self.coalesced.load(Ordering::SeqCst),
            max_in_flight: self.max_in_flight.load(Ordering::SeqCst),
        }
    }

    pub fn status(&self) -> ChannelStatus {
        ChannelStatus {
            channel: self.id.clone(),
            state: self.state(),
            open_generation: self.space.open_generation(),
            cycles: self.cycles.load(Ordering::SeqCst),
            last_outcome: self.last_outcome(),
        }
    }

    fn now(&self) -> Timestamp {
        self.dataspace.clock().now()
    }

    fn diag(&self, level: Level, module: &str, event: &str, detail: impl Into<String>) {
        let detail = detail.into();
        let log_level = match level {
            Level::Debug => log::Level::Debug,
            Level::Info => log::Level::Info,
            Level::Warn => log::Level::Warn,
            Level::Error => log::Level::Error,
        };
        log::log!(target: "decision_engine", log_level, "{} {} {} {}", self.id, module, event, detail);
        let mut d = self.diagnostics.lock();
        if d.len() == DIAGNOSTIC_CAPACITY {
            d.pop_front();
        }
        d.push_back(Diagnostic { at: self.now(), level, module: module.to_string(), event: event.to_string(), detail });
    }

    fn fail(&self, module: &str, reason: String) {
        let mut st = self.state.lock();
        if matches!(*st, ChannelState::Stopping | ChannelState::Stopped | ChannelState::Failed) {
            return;
        }
        *st = ChannelState::Failed;
        drop(st);
        self.diag(Level::Error, module, "channel_failed", reason);
    }

    /// Run one source or proxy by its index in [`feeds`](Self::feeds).
    pub fn run_feed(&self, index: usize) -> FeedRun {
        let feed = &self.feeds[index];
        if !self.state().accepts_feeds() {
            return FeedRun::Skipped;
        }
        self.feed_runs.fetch_add(1, Ordering::SeqCst);
        let produced = match &feed.kind {
            FeedKind::Source { spec, module } => self.invoke_source(spec, module),
            FeedKind::Proxy { binding, last } => self.invoke_proxy(binding, last),
        };
        match produced {
            Ok(products) if products.is_empty() => {
                feed.failures.store(0, Ordering::SeqCst);
                FeedRun::Nothing
            }
            Ok(products) => {
                let mut generation = GenerationId(0);
                let mut names = Vec::new();
                for p in products {
                    names.push(p.name.clone());
                    match self.space.put(p) {
                        Ok(g) => generation = g,
                        Err(SpaceError::SpaceClosed(_)) => return FeedRun::Skipped,
                        Err(e) => return self.feed_failed(feed, e.to_string()),
                    }
                }
                feed.failures.store(0, Ordering::SeqCst);
                feed.delivered.store(true, Ordering::SeqCst);
                self.diag(Level::Debug, &feed.name, "put", format!("{} gen={}", names.join(","), generation));
                self.promote_if_booted();
                self.triggers.fetch_add(1, Ordering::SeqCst);
                let effect = self.trigger.trigger();
                if effect == TriggerEffect::Coalesced {
                    self.coalesced.fetch_add(1, Ordering::SeqCst);
                }
                FeedRun::Delivered { generation, products: names, trigger: effect }
            }
            Err(message) => self.feed_failed(feed, message),
        }
    }

    fn feed_failed(&self, feed: &Feed, message: String) -> FeedRun {
        self.feed_failures.fetch_add(1, Ordering::SeqCst);
        let n = feed.failures.fetch_add(1, Ordering::SeqCst) + 1;
        self.diag(Level::Warn, &feed.name, "source_error", format!("{message} (consecutive={n})"));
        if n >= SOURCE_FAILURE_BUDGET {
            self.fail(&feed.name, format!("{n} consecutive failures, last: {message}"));
        }
        FeedRun::Failed(message)
    }

    fn invoke_source(&self, spec: &ModuleSpec, module: &Mutex<Box<dyn Module>>) -> Result<Vec<DataProduct>, String> {
        let ctx =
            InvokeContext { channel: self.id.clone(), module: spec.name.clone(), now: self.now(), generation: None };
        let out = invoke_guarded(module, &ctx, &Inputs::new())?;
        if let Some(extra) = out.keys().find(|k| !spec.produces.contains(k)) {
            return Err(format!("produced undeclared product `{extra}`"));
        }
        Ok(out.into_iter().map(|(name, v)| DataProduct::new(name, v, &spec.name, ctx.now)).collect())
    }

    fn invoke_proxy(
        &self,
        binding: &SourceProxyBinding,
        last: &Mutex<Option<(String, GenerationId)>>,
    ) -> Result<Vec<DataProduct>, String> {
        match resolve_source_proxy(binding, &self.dataspace) {
            Ok(p) => {
                let origin = p.origin.as_ref().expect("proxy products carry an origin");
                let key = (origin.channel.clone(), origin.generation);
                let mut last = last.lock();
                if last.as_ref() == Some(&key) {
                    return Ok(Vec::new());
                }
                *last = Some(key);
                Ok(vec![p])
            }
            Err(e @ (ProxyError::Stale { .. } | ProxyError::UnknownProduct { .. })) => {
                self.diag(Level::Debug, &binding.name, "proxy_wait", e.to_string());
                Ok(Vec::new())
            }
            Err(e) => Err(e.to_string()),
        }
    }

    fn promote_if_booted(&self) {
        let mut st = self.state.lock();
        if *st == ChannelState::Boot && self.feeds.iter().all(|f| f.delivered.load(Ordering::SeqCst)) {
            *st = ChannelState::Steady;
            drop(st);
            self.diag(Level::Info, "-", "steady", "every source has run");
        }
    }

    /// Fail the channel if boot has outlasted its deadline. Returns true when
    /// that happened on this call.
    pub fn check_boot_deadline(&self) -> bool {
        if self.state() != ChannelState::Boot {
            return false;
        }
        let waited = self.now().millis() - self.boot_started.lock().millis();
        if waited <= self.boot_timeout.as_millis() as i64 {
            return false;
        }
        let missing = self.unsatisfied_feeds().join(", ");
        self.fail("-", format!("boot deadline passed; waiting on: {missing}"));
        self.state() == ChannelState::Failed
    }

    /// Run cycles while triggers are pending and the channel is steady,
    /// including coalesced follow-ups.
    pub fn poll(&self) -> Vec<CycleOutcome> {
        let mut out = Vec::new();
        loop {
            if self.state() != ChannelState::Steady || !self.trigger.try_begin() {
                return out;
            }
            match self.cycle_in_flight() {
                Ok(o) => out.push(o),
                Err(e) => {
                    self.diag(Level::Error, "-", "cycle_error", e.to_string());
                    return out;
                }
            }
        }
    }

    /// Run one cycle now, regardless of pending triggers.
    pub fn execute_cycle(&self) -> Result<CycleOutcome, CycleError> {
        let st = self.state();
        if st == ChannelState::Cycling {
            return Err(CycleError::CycleInFlight(self.id.clone()));
        }
        if st != ChannelState::Steady {
            return Err(CycleError::NotSteady(self.id.clone(), st));
        }
        if !self.trigger.begin_now() {
            return Err(CycleError::CycleInFlight(self.id.clone()));
        }
        self.cycle_in_flight()
    }

    /// Body of a cycle; the trigger cell is already marked in flight.
    fn cycle_in_flight(&self) -> Result<CycleOutcome, CycleError> {
        {
            let mut st = self.state.lock();
            if *st == ChannelState::Steady {
                *st = ChannelState::Cycling;
            }
        }
        let n = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(n, Ordering::SeqCst);
        let result = self.run_cycle();
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        {
            let mut st = self.state.lock();
            if *st == ChannelState::Cycling {
                *st = ChannelState::Steady;
            }
        }
        self.trigger.finish();
        if let Ok(o) = &result {
            self.cycles.fetch_add(1, Ordering::SeqCst);
            *self.last_outcome.lock() = Some(o.clone());
        }
        result
    }

    fn run_cycle(&self) -> Result<CycleOutcome, CycleError> {
        let started = Instant::now();
        let (generation, view) = self.space.snapshot()?;
        let mut fired_rules = Vec::new();
        let mut publishers_run = Vec::new();
        let mut failures = Vec::new();

        match self.run_transforms(&view) {
            Err(f) => failures.push(f),
            Ok(()) => match run_inference(&self.plan, &view) {
                Err(e) => failures.push(StageFailure {
                    kind: match e {
                        RunInferenceError::Space(_) => CycleOutcomeKind::TransformError,
                        RunInferenceError::Inference(_) => CycleOutcomeKind::FactError,
                    },
                    module: logic::LOGIC_ENGINE.into(),
                    message: e.to_string(),
                }),
                Ok(result) => {
                    fired_rules = result.fired_rules.clone();
                    for name in &result.publishers_to_run {
                        publishers_run.push(name.clone());
                        if let Err(f) = self.run_publisher(name, &view) {
                            failures.push(f);
                        }
                    }
                }
            },
        }

        let outcome = failures.first().map_or(CycleOutcomeKind::Success, |f| f.kind);
        let error = if failures.is_empty() {
            None
        } else {
            let detail: Vec<Value> =
                failures.iter().map(|f| json!({"module": f.module, "message": f.message})).collect();
            let _ = view.record_cycle_product(DataProduct::new(
                CYCLE_ERROR,
                json!({"stage": outcome.as_str(), "failures": detail}),
                "channel",
                view.started_at(),
            ));
            for f in &failures {
                self.diag(Level::Warn, &f.module, outcome.as_str(), &f.message);
            }
            Some(failures.iter().map(|f| format!("{}: {}", f.module, f.message)).collect::<Vec<_>>().join("; "))
        };
        view.lock_and_archive(outcome)?;
        let o = CycleOutcome {
            channel: self.id.clone(),
            generation,
            outcome,
            fired_rules,
            publishers_run,
            duration: started.elapsed(),
            error,
        };
        self.diag(
            Level::Info,
            "-",
            "cycle",
            format!(
                "gen={} outcome={} fired=[{}] published=[{}]",
                generation,
                outcome.as_str(),
                o.fired_rules.join(","),
                o.publishers_run.join(",")
            ),
        );
        Ok(o)
    }

    fn gather(&self, spec: &ModuleSpec, view: &DataBlockView) -> Result<Inputs, String> {
        let mut inputs = Inputs::new();
        for c in &spec.consumes {
            let p = view.get(c).ok_or_else(|| ModuleError::MissingInput(c.clone()).to_string())?;
            inputs.insert(c.clone(), p);
        }
        Ok(inputs)
    }

    fn ctx(&self, spec: &ModuleSpec, view: &DataBlockView) -> InvokeContext {
        InvokeContext {
            channel: self.id.clone(),
            module: spec.name.clone(),
            now: view.started_at(),
            generation: Some(view.generation()),
        }
    }

    fn run_transforms(&self, view: &DataBlockView) -> Result<(), StageFailure> {
        for stage in &self.transforms {
            let failure = |message: String| StageFailure {
                kind: CycleOutcomeKind::TransformError,
                module: stage.spec.name.clone(),
                message,
            };
            let inputs = self.gather(&stage.spec, view).map_err(failure)?;
            let out = invoke_guarded(&stage.module, &self.ctx(&stage.spec, view), &inputs).map_err(failure)?;
            for (name, value) in out {
                if !stage.spec.produces.contains(&name) {
                    return Err(failure(format!("produced undeclared product `{name}`")));
                }
                view.record_cycle_product(DataProduct::new(name, value, &stage.spec.name, view.started_at()))
                    .map_err(|e| failure(e.to_string()))?;
            }
        }
        Ok(())
    }

    /// Publisher outputs are kept as reports in the cycle's block.
    fn run_publisher(&self, name: &str, view: &DataBlockView) -> Result<(), StageFailure> {
        let failure = |message: String| StageFailure {
            kind: CycleOutcomeKind::PublisherError,
            module: name.to_string(),
            message,
        };
        let stage = self.publishers.get(name).ok_or_else(|| failure("no such publisher".into()))?;
        let inputs = self.gather(&stage.spec, view).map_err(failure)?;
        let out = invoke_guarded(&stage.module, &self.ctx(&stage.spec, view), &inputs).map_err(failure)?;
        for (product, value) in out {
            view.record_cycle_product(DataProduct::new(product, value, name, view.started_at()))
                .map_err(|e| failure(e.to_string()))?;
        }
        Ok(())
    }

    // ---- lifecycle hooks used by the task manager ----

    /// Move to stopping and refuse new triggers. Returns the prior state.
    pub(crate) fn begin_stop(&self) -> ChannelState {
        let mut st = self.state.lock();
        let prior = *st;
        *st = ChannelState::Stopping;
        drop(st);
        self.trigger.shutdown();
        self.diag(Level::Info, "-", "stopping", format!("from {prior}"));
        prior
    }

    pub(crate) fn finish_stop(&self) {
        self.space.close();
        *self.state.lock() = ChannelState::Stopped;
        self.diag(Level::Info, "-", "stopped", "");
    }

    /// Return to boot with every feed unsatisfied, reopening the space.
    pub(crate) fn reset_for_start(&self) {
        self.space.reopen();
        self.trigger.reset();
        for f in &self.feeds {
            f.delivered.store(false, Ordering::SeqCst);
            f.failures.store(0, Ordering::SeqCst);
            if let FeedKind::Proxy { last, .. } = &f.kind {
                *last.lock() = None;
            }
        }
        *self.boot_started.lock() = self.now();
        *self.state.lock() = ChannelState::Boot;
        self.diag(Level::Info, "-", "boot", "");
    }
}
