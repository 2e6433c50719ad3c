//! Synthetic inputs for the benchmarks in `benches/`.

use std::collections::BTreeMap;

use decision_engine::stdlib::{BudgetStatus, ResourceClass, ResourceKind, ResourceState, ShortlistEntry};
use serde_json::{json, Value};

/// `classes` resource classes cycling through grid, cloud and HPC kinds.
pub fn classes(classes: usize) -> Vec<ResourceClass> {
    (0..classes)
        .map(|i| {
            let kind = [ResourceKind::Grid, ResourceKind::Cloud, ResourceKind::Hpc][i % 3];
            ResourceClass {
                class_id: format!("class_{i:03}"),
                kind,
                price_performance: 1.0,
                unit_cost: if kind == ResourceKind::Cloud { 0.25 } else { 0.0 },
                capacity_limit: 500,
                current_occupancy: (i as u64 * 7) % 50,
                state: ResourceState::Up,
            }
        })
        .collect()
}

/// `bundles` shortlist entries, each eligible for up to `width` classes.
pub fn shortlist(bundles: usize, classes: &[ResourceClass], width: usize) -> Vec<ShortlistEntry> {
    (0..bundles)
        .map(|b| ShortlistEntry {
            bundle_id: format!("c1-m{}-w1-b{b:04}", 1000 + b),
            count: 10 + (b as u64 * 37) % 400,
            cpus: 1,
            memory_mb: 1000 + b as u32,
            wall_hours: 1.0 + (b % 4) as f64,
            eligible: (0..width.min(classes.len()))
                .map(|k| classes[(b + k * 3) % classes.len()].class_id.clone())
                .collect(),
        })
        .collect()
}

pub fn rich_budget() -> BudgetStatus {
    BudgetStatus { cloud_funds_remaining: 1e6, hpc_allocation_remaining: 1e6 }
}

/// Products the shipped policy reads, with an allocation plan of `requests`
/// entries.
pub fn policy_products(requests: usize) -> BTreeMap<String, Value> {
    let plan: Vec<Value> = (0..requests)
        .map(|i| json!({"class_id": format!("class_{i}"), "slots": i + 1, "for_bundle": "b", "cpus": 1, "memory_mb": 1000}))
        .collect();
    BTreeMap::from([
        ("allocation_plan".to_string(), Value::Array(plan)),
        ("budget".to_string(), json!({"cloud_funds_remaining": 42.0, "hpc_allocation_remaining": 7.0})),
    ])
}
