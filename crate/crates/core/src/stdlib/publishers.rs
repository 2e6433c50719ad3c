//! Publishers: provisioning requests and the metrics CSV.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::adapters::{lookup, Endpoints, ProvisionerAdapter};
use super::sources::{BUDGET, IDLE_JOBS, RESOURCES};
use super::transforms::ALLOCATION_PLAN;
use super::types::{to_value, BudgetStatus, JobBundle, ProvisionRequest, Receipt, ResourceClass};
use crate::channel::{input, param, Inputs, InvokeContext, Module, ModuleError, Outputs};
use crate::logic::{InferenceResult, INFERENCE_RESULT};

pub const PROVISION_RECEIPTS: &str = "provision_receipts";

pub(crate) fn provision(endpoints: &Endpoints, params: &Value) -> Result<Box<dyn Module>, String> {
    let id: String = param(params, "provisioner", "default".to_string())?;
    let adapter = lookup(&endpoints.provisioners, "provisioner", &id)?;
    Ok(Box::new(move |_: &InvokeContext, inputs: &Inputs| {
        let mut plan: Vec<ProvisionRequest> = input(inputs, ALLOCATION_PLAN)?;
        if let Some(p) = inputs.get(INFERENCE_RESULT) {
            let inference = InferenceResult::from_value(&p.value)
                .map_err(|e| ModuleError::BadInput { product: INFERENCE_RESULT.into(), message: e.to_string() })?;
            for r in &mut plan {
                r.justification.fired_rules = inference.fired_rules.clone();
            }
        }
        let receipts = adapter.submit_batch(&plan);
        Ok(Outputs::from([(PROVISION_RECEIPTS.to_string(), to_value(&receipts))]))
    }))
}

struct MetricsSink {
    path: PathBuf,
    file: Option<File>,
    classes: Vec<String>,
}

impl MetricsSink {
    fn write_row(&mut self, row: &[String], header: impl FnOnce() -> Vec<String>) -> std::io::Result<()> {
        if self.file.is_none() {
            if let Some(dir) = self.path.parent() {
                std::fs::create_dir_all(dir)?;
            }
            let mut f = OpenOptions::new().create(true).write(true).truncate(true).open(&self.path)?;
            writeln!(f, "{}", header().join(","))?;
            self.file = Some(f);
        }
        let f = self.file.as_mut().expect("opened above");
        writeln!(f, "{}", row.join(","))?;
        f.flush()
    }
}

/// Column names of the metrics CSV for the given classes.
pub fn metrics_header(classes: &[String]) -> Vec<String> {
    let mut h = vec!["sim_time".to_string(), "generation".into(), "idle_jobs_total".into()];
    h.extend(classes.iter().map(|c| format!("slots_{c}")));
    h.push("funds_remaining".into());
    h.push("allocation_remaining".into());
    h
}

pub(crate) fn metrics(endpoints: &Endpoints, params: &Value) -> Result<Box<dyn Module>, String> {
    let id: String = param(params, "provisioner", "default".to_string())?;
    let adapter = lookup(&endpoints.provisioners, "provisioner", &id)?;
    let dir = endpoints.metrics_dir.clone();
    let mut sink: Option<MetricsSink> = None;
    Ok(Box::new(move |ctx: &InvokeContext, inputs: &Inputs| {
        let bundles: Vec<JobBundle> = input(inputs, IDLE_JOBS)?;
        let budget: BudgetStatus = input(inputs, BUDGET)?;
        let resources: Vec<ResourceClass> = input(inputs, RESOURCES)?;
        let sink = sink.get_or_insert_with(|| {
            let mut classes: Vec<String> = resources.iter().map(|r| r.class_id.clone()).collect();
            classes.sort();
            MetricsSink { path: dir.join(format!("{}.csv", ctx.channel)), file: None, classes }
        });
        let slots = adapter.query_slots();
        let mut row = vec![
            ctx.now.to_rfc3339(),
            ctx.generation.map_or(String::new(), |g| g.to_string()),
            bundles.iter().map(|b| b.count).sum::<u64>().to_string(),
        ];
        row.extend(sink.classes.iter().map(|c| slots.get(c).copied().unwrap_or(0).to_string()));
        row.push(format!("{:.4}", budget.cloud_funds_remaining));
        row.push(format!("{:.4}", budget.hpc_allocation_remaining));
        let classes = sink.classes.clone();
        sink.write_row(&row, || metrics_header(&classes))
            .map_err(|e| ModuleError::Failed(format!("metrics {}: {e}", sink.path.display())))?;
        Ok(Outputs::new())
    }))
}

/// What a worker-pool style provisioner receives: a count and a shape,
/// with no per-site detail.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerRequest {
    pub workers: u64,
    pub cpus: u32,
    pub memory_mb: u32,
}

/// Provisioner stub that collapses per-class requests into target worker
/// counts per worker configuration, and accepts everything.
#[derive(Debug, Default)]
pub struct WorkerPoolStub {
    received: Mutex<Vec<WorkerRequest>>,
    workers: Mutex<u64>,
}

impl WorkerPoolStub {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn received(&self) -> Vec<WorkerRequest> {
        self.received.lock().clone()
    }
}

impl ProvisionerAdapter for WorkerPoolStub {
    fn submit(&self, request: &ProvisionRequest) -> Receipt {
        self.submit_batch(std::slice::from_ref(request)).pop().expect("one receipt per request")
    }

    fn submit_batch(&self, requests: &[ProvisionRequest]) -> Vec<Receipt> {
        let mut shapes: BTreeMap<(u32, u32), u64> = BTreeMap::new();
        for r in requests {
            *shapes.entry((r.cpus, r.memory_mb)).or_default() += r.slots;
        }
        let mut received = self.received.lock();
        for ((cpus, memory_mb), workers) in shapes {
            *self.workers.lock() += workers;
            received.push(WorkerRequest { workers, cpus, memory_mb });
        }
        requests.iter().map(Receipt::accepted).collect()
    }

    fn query_slots(&self) -> BTreeMap<String, u64> {
        BTreeMap::from([("workers".to_string(), *self.workers.lock())])
    }
}
