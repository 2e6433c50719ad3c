//! Stdlib adapters backed by a shared simulator.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use parking_lot::Mutex;

use super::facility::FacilitySim;
use crate::stdlib::{
    BudgetAdapter, BudgetStatus, Endpoints, IdleJob, ManifestAdapter, ProvisionRequest, ProvisionerAdapter,
    QueueAdapter, Receipt, ResourceClass, WorkerPoolStub,
};

pub type SharedSim = Arc<Mutex<FacilitySim>>;

#[derive(Clone)]
pub struct SimAdapter(pub SharedSim);

impl QueueAdapter for SimAdapter {
    fn idle_jobs(&self) -> Result<Vec<IdleJob>, String> {
        Ok(self.0.lock().idle_jobs())
    }
}

impl ManifestAdapter for SimAdapter {
    fn resources(&self) -> Result<Vec<ResourceClass>, String> {
        Ok(self.0.lock().resources())
    }
}

impl BudgetAdapter for SimAdapter {
    fn budget(&self) -> Result<BudgetStatus, String> {
        Ok(self.0.lock().budget())
    }
}

impl ProvisionerAdapter for SimAdapter {
    fn submit(&self, request: &ProvisionRequest) -> Receipt {
        self.0.lock().submit(request)
    }

    fn query_slots(&self) -> BTreeMap<String, u64> {
        self.0.lock().running_slots()
    }
}

/// Endpoints named `default` that talk to `sim`, plus a `worker_pool`
/// provisioner that only records collapsed worker requests.
pub fn sim_endpoints(sim: &SharedSim, metrics_dir: &Path) -> Endpoints {
    let a = Arc::new(SimAdapter(sim.clone()));
    let mut e = Endpoints::new(metrics_dir);
    e.queues.insert("default".into(), a.clone());
    e.manifests.insert("default".into(), a.clone());
    e.budgets.insert("default".into(), a.clone());
    e.provisioners.insert("default".into(), a);
    e.provisioners.insert("worker_pool".into(), WorkerPoolStub::new());
    e
}
