use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResourceKind {
    Cloud,
    Hpc,
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResourceState {
    Up,
    Down,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Requirements {
    pub cpus: u32,
    pub memory_mb: u32,
    pub wall_hours: f64,
}

/// One queued job as reported by a queue adapter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdleJob {
    pub requirements: Requirements,
    pub preferred_resources: Vec<String>,
}

/// Idle jobs sharing requirements and preferences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobBundle {
    pub bundle_id: String,
    pub count: u64,
    pub requirements: Requirements,
    pub preferred_resources: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceClass {
    pub class_id: String,
    pub kind: ResourceKind,
    pub price_performance: f64,
    /// Currency per slot-hour for cloud, wall-hours per slot-hour for hpc,
    /// zero for grid.
    pub unit_cost: f64,
    pub capacity_limit: u64,
    pub current_occupancy: u64,
    pub state: ResourceState,
}

impl ResourceClass {
    pub fn headroom(&self) -> u64 {
        self.capacity_limit.saturating_sub(self.current_occupancy)
    }

    pub fn available(&self) -> bool {
        self.state == ResourceState::Up && self.headroom() > 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetStatus {
    pub cloud_funds_remaining: f64,
    pub hpc_allocation_remaining: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortlistEntry {
    pub bundle_id: String,
    pub count: u64,
    pub cpus: u32,
    pub memory_mb: u32,
    pub wall_hours: f64,
    pub eligible: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Justification {
    /// Filled in by the provision publisher from the cycle's inference.
    #[serde(default)]
    pub fired_rules: Vec<String>,
    pub shares: BTreeMap<String, u64>,
    /// Classes that got nothing, with the reason.
    #[serde(default)]
    pub excluded: BTreeMap<String, String>,
    pub iterations: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvisionRequest {
    pub class_id: String,
    pub slots: u64,
    pub for_bundle: String,
    pub cpus: u32,
    pub memory_mb: u32,
    pub justification: Justification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Receipt {
    pub class_id: String,
    pub for_bundle: String,
    pub slots: u64,
    pub accepted: bool,
    pub reason: Option<String>,
}

impl Receipt {
    pub fn accepted(req: &ProvisionRequest) -> Self {
        Receipt {
            class_id: req.class_id.clone(),
            for_bundle: req.for_bundle.clone(),
            slots: req.slots,
            accepted: true,
            reason: None,
        }
    }

    pub fn rejected(req: &ProvisionRequest, reason: impl Into<String>) -> Self {
        Receipt { accepted: false, reason: Some(reason.into()), ..Receipt::accepted(req) }
    }
}

pub(crate) fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("stdlib types serialize")
}
