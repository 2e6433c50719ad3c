//! The interfaces stdlib modules use to reach external systems.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use super::types::{BudgetStatus, IdleJob, ProvisionRequest, Receipt, ResourceClass};

pub trait QueueAdapter: Send + Sync {
    fn idle_jobs(&self) -> Result<Vec<IdleJob>, String>;
}

pub trait ManifestAdapter: Send + Sync {
    fn resources(&self) -> Result<Vec<ResourceClass>, String>;
}

pub trait BudgetAdapter: Send + Sync {
    fn budget(&self) -> Result<BudgetStatus, String>;
}

pub trait ProvisionerAdapter: Send + Sync {
    fn submit(&self, request: &ProvisionRequest) -> Receipt;

    /// Running slots per class.
    fn query_slots(&self) -> BTreeMap<String, u64>;

    fn submit_batch(&self, requests: &[ProvisionRequest]) -> Vec<Receipt> {
        requests.iter().map(|r| self.submit(r)).collect()
    }
}

/// Named adapter instances that stdlib plugins look up by their `endpoint`
/// parameter, plus where metrics go.
#[derive(Clone, Default)]
pub struct Endpoints {
    pub queues: BTreeMap<String, Arc<dyn QueueAdapter>>,
    pub manifests: BTreeMap<String, Arc<dyn ManifestAdapter>>,
    pub budgets: BTreeMap<String, Arc<dyn BudgetAdapter>>,
    pub provisioners: BTreeMap<String, Arc<dyn ProvisionerAdapter>>,
    pub metrics_dir: PathBuf,
}

impl Endpoints {
    pub fn new(metrics_dir: impl Into<PathBuf>) -> Self {
        Endpoints { metrics_dir: metrics_dir.into(), ..Default::default() }
    }
}

pub(crate) fn lookup<T: ?Sized>(map: &BTreeMap<String, Arc<T>>, what: &str, id: &str) -> Result<Arc<T>, String> {
    map.get(id).cloned().ok_or_else(|| {
        let known: Vec<&str> = map.keys().map(String::as_str).collect();
        format!("no {what} endpoint `{id}` (known: {})", known.join(", "))
    })
}
