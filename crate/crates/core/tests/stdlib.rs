//! The provisioning plugins running inside a channel against fake endpoints.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;

use decision_engine::channel::{assemble_channel, ChannelOptions, PluginRegistry};
use decision_engine::clock::{ManualClock, SIM_EPOCH};
use decision_engine::config::{load_config, ChannelConfig};
use decision_engine::dataspace::{CycleOutcomeKind, DataSpace};
use decision_engine::sim::{run_scenario, RunOptions, SimScenario};
use decision_engine::stdlib::{
    metrics_header, provisioning_channel, register, BudgetAdapter, BudgetStatus, Endpoints, IdleJob, ManifestAdapter,
    ProvisionRequest, ProvisionerAdapter, QueueAdapter, Receipt, Requirements, ResourceClass, ResourceKind,
    ResourceState, WorkerPoolStub, WorkerRequest, METRICS_PUBLISHER, PROVISION_PUBLISHER, PROVISION_RECEIPTS,
};
use decision_engine::Channel;

#[derive(Default)]
struct Fake {
    jobs: Mutex<Vec<IdleJob>>,
    classes: Mutex<Vec<ResourceClass>>,
    budget: Mutex<Option<BudgetStatus>>,
    refuse: Mutex<BTreeSet<String>>,
    submitted: Mutex<Vec<ProvisionRequest>>,
}

impl QueueAdapter for Fake {
    fn idle_jobs(&self) -> Result<Vec<IdleJob>, String> {
        Ok(self.jobs.lock().clone())
    }
}

impl ManifestAdapter for Fake {
    fn resources(&self) -> Result<Vec<ResourceClass>, String> {
        Ok(self.classes.lock().clone())
    }
}

impl BudgetAdapter for Fake {
    fn budget(&self) -> Result<BudgetStatus, String> {
        Ok((*self.budget.lock())
            .unwrap_or(BudgetStatus { cloud_funds_remaining: 1000.0, hpc_allocation_remaining: 1000.0 }))
    }
}

impl ProvisionerAdapter for Fake {
    fn submit(&self, request: &ProvisionRequest) -> Receipt {
        self.submitted.lock().push(request.clone());
        if self.refuse.lock().contains(&request.class_id) {
            Receipt::rejected(request, "site offline")
        } else {
            Receipt::accepted(request)
        }
    }

    fn query_slots(&self) -> BTreeMap<String, u64> {
        let mut out = BTreeMap::new();
        for r in self.submitted.lock().iter() {
            *out.entry(r.class_id.clone()).or_default() += r.slots;
        }
        out
    }
}

fn class(id: &str, kind: ResourceKind) -> ResourceClass {
    ResourceClass {
        class_id: id.into(),
        kind,
        price_performance: 1.0,
        unit_cost: if kind == ResourceKind::Cloud { 0.5 } else { 0.0 },
        capacity_limit: 100,
        current_occupancy: 0,
        state: ResourceState::Up,
    }
}

fn jobs(n: usize, cpus: u32, memory_mb: u32, prefs: &[&str]) -> Vec<IdleJob> {
    let job = IdleJob {
        requirements: Requirements { cpus, memory_mb, wall_hours: 1.0 },
        preferred_resources: prefs.iter().map(|s| s.to_string()).collect(),
    };
    vec![job; n]
}

struct Rig {
    fake: Arc<Fake>,
    pool: Arc<WorkerPoolStub>,
    channel: Channel,
    _dir: tempfile::TempDir,
}

fn rig(cfg: impl FnOnce(ChannelConfig) -> ChannelConfig) -> Rig {
    let dir = tempfile::tempdir().unwrap();
    let fake = Arc::new(Fake::default());
    let pool = WorkerPoolStub::new();
    let mut endpoints = Endpoints::new(dir.path().join("metrics"));
    endpoints.queues.insert("default".into(), fake.clone());
    endpoints.manifests.insert("default".into(), fake.clone());
    endpoints.budgets.insert("default".into(), fake.clone());
    endpoints.provisioners.insert("default".into(), fake.clone());
    endpoints.provisioners.insert("worker_pool".into(), pool.clone());
    let mut registry = PluginRegistry::new();
    register(&mut registry, endpoints);
    let config = cfg(provisioning_channel("prov", Duration::from_secs(60)));
    let ds = DataSpace::in_memory(Arc::new(ManualClock::new(SIM_EPOCH)));
    let channel = assemble_channel(&config, &registry, &ds, &ChannelOptions::default()).unwrap();
    Rig { fake, pool, channel, _dir: dir }
}

impl Rig {
    fn cycle(&self) -> decision_engine::CycleOutcome {
        for i in 0..self.channel.feeds().len() {
            self.channel.run_feed(i);
        }
        let mut out = self.channel.poll();
        assert_eq!(out.len(), 1, "one cycle per round");
        out.pop().unwrap()
    }

    fn receipts(&self) -> Vec<Receipt> {
        let rec = self.channel.space().latest_archived().unwrap();
        serde_json::from_value(rec.value(PROVISION_RECEIPTS).expect("receipts archived").clone()).unwrap()
    }

    fn metrics_path(&self) -> std::path::PathBuf {
        self._dir.path().join("metrics/prov.csv")
    }
}

#[test]
fn three_bundles_give_three_receipts() {
    let r = rig(|c| c);
    *r.fake.classes.lock() = vec![class("aws", ResourceKind::Cloud), class("osg", ResourceKind::Grid)];
    let mut j = jobs(4, 1, 2000, &["aws"]);
    j.extend(jobs(3, 8, 16000, &["osg"]));
    j.extend(jobs(2, 2, 4000, &["osg"]));
    *r.fake.jobs.lock() = j;
    let out = r.cycle();
    assert_eq!(out.outcome, CycleOutcomeKind::Success);
    assert_eq!(out.publishers_run, vec![METRICS_PUBLISHER.to_string(), PROVISION_PUBLISHER.to_string()]);
    let receipts = r.receipts();
    assert_eq!(receipts.len(), 3);
    assert!(receipts.iter().all(|x| x.accepted));
    let submitted = r.fake.submitted.lock();
    assert_eq!(submitted.iter().map(|s| s.slots).sum::<u64>(), 9);
    assert!(submitted.iter().all(|s| s.justification.fired_rules.contains(&"provision_when_work".to_string())));
}

#[test]
fn rejected_requests_do_not_fail_the_cycle() {
    let r = rig(|c| c);
    *r.fake.classes.lock() = vec![class("aws", ResourceKind::Cloud), class("osg", ResourceKind::Grid)];
    *r.fake.jobs.lock() = jobs(10, 1, 1000, &["aws", "osg"]);
    r.fake.refuse.lock().insert("aws".into());
    let out = r.cycle();
    assert_eq!(out.outcome, CycleOutcomeKind::Success);
    let receipts = r.receipts();
    let by_class: BTreeMap<_, _> = receipts.iter().map(|x| (x.class_id.clone(), (x.accepted, x.slots))).collect();
    assert_eq!(by_class["aws"], (false, 5));
    assert_eq!(by_class["osg"], (true, 5));
    let reason = &receipts.iter().find(|x| !x.accepted).unwrap().reason;
    assert_eq!(reason.as_deref(), Some("site offline"));
}

#[test]
fn worker_pool_sees_only_shapes_and_counts() {
    let r = rig(|mut c| {
        c.publishers[0] = c.publishers[0].clone().with_params(serde_json::json!({"provisioner": "worker_pool"}));
        c
    });
    *r.fake.classes.lock() = vec![class("a", ResourceKind::Grid), class("b", ResourceKind::Grid)];
    let mut j = jobs(6, 1, 2000, &["a", "b"]);
    j.extend(jobs(3, 4, 8000, &["b"]));
    *r.fake.jobs.lock() = j;
    assert_eq!(r.cycle().outcome, CycleOutcomeKind::Success);
    assert_eq!(
        r.pool.received(),
        vec![
            WorkerRequest { workers: 6, cpus: 1, memory_mb: 2000 },
            WorkerRequest { workers: 3, cpus: 4, memory_mb: 8000 },
        ]
    );
    assert!(r.fake.submitted.lock().is_empty());
}

#[test]
fn empty_queue_runs_only_metrics() {
    let r = rig(|c| c);
    *r.fake.classes.lock() = vec![class("osg", ResourceKind::Grid)];
    let out = r.cycle();
    assert_eq!(out.outcome, CycleOutcomeKind::Success);
    assert_eq!(out.publishers_run, vec![METRICS_PUBLISHER.to_string()]);
    assert!(r.fake.submitted.lock().is_empty());
}

#[test]
fn metrics_header_written_once_with_sorted_class_columns() {
    let r = rig(|c| c);
    let ids = ["zeta", "alpha", "nersc", "grid_b", "grid_a", "aws"];
    *r.fake.classes.lock() = ids.iter().map(|id| class(id, ResourceKind::Grid)).collect();
    *r.fake.jobs.lock() = jobs(12, 1, 1000, &["alpha", "zeta"]);
    for _ in 0..4 {
        r.cycle();
    }
    let text = std::fs::read_to_string(r.metrics_path()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5);
    let mut sorted: Vec<String> = ids.iter().map(|s| s.to_string()).collect();
    sorted.sort();
    assert_eq!(lines[0], metrics_header(&sorted).join(","));
    assert_eq!(lines.iter().filter(|l| l.starts_with("sim_time")).count(), 1);
    assert!(lines[0].starts_with("sim_time,generation,idle_jobs_total,slots_alpha,slots_aws,"));
    let first: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(first.len(), 3 + ids.len() + 2);
    assert_eq!(first[1], "0");
    assert_eq!(first[2], "12");
    assert_eq!(first[3], "0", "nothing submitted before the first cycle's metrics");
}

fn column(csv: &Path, name: &str) -> Vec<f64> {
    let text = std::fs::read_to_string(csv).unwrap();
    let mut lines = text.lines();
    let idx = lines.next().unwrap().split(',').position(|h| h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().parse().unwrap()).collect()
}

#[test]
fn simulated_budgets_never_increase() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let config = load_config(root.join("scenarios/engine.toml")).unwrap();
    let scenario = SimScenario::load(root.join("scenarios/hybrid_facility.toml")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions {
        archive_dir: Some(dir.path().join("archive")),
        metrics_dir: Some(dir.path().join("metrics")),
        duration: None,
    };
    let report = run_scenario(&scenario, &config, &opts).unwrap();
    let csv = dir.path().join("metrics/provisioning.csv");
    for name in ["funds_remaining", "allocation_remaining"] {
        let col = column(&csv, name);
        assert_eq!(col.len() as u64, report.cycles["provisioning"]);
        assert!(col.windows(2).all(|w| w[1] <= w[0]), "{name} increased");
    }
    assert!(column(&csv, "funds_remaining").last().unwrap() < &scenario.initial_funds);
}
