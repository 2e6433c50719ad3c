//! Provisioning policy built from engine plugins: sources that read the job
//! queue, resource manifest and budget; transforms that shortlist and
//! allocate; publishers that submit requests and write metrics.

mod adapters;
mod publishers;
mod sources;
mod transforms;
mod types;

use std::time::Duration;

use serde_json::json;

pub use adapters::{BudgetAdapter, Endpoints, ManifestAdapter, ProvisionerAdapter, QueueAdapter};
pub use publishers::{metrics_header, WorkerPoolStub, WorkerRequest, PROVISION_RECEIPTS};
pub use sources::{bundle_id, bundle_jobs, BUDGET, IDLE_JOBS, RESOURCES};
pub use transforms::{allocate, largest_remainder, shortlist, ALLOCATION_PLAN, DEFAULT_CAP, SHORTLIST};
pub use types::{
    BudgetStatus, IdleJob, JobBundle, Justification, ProvisionRequest, Receipt, Requirements, ResourceClass,
    ResourceKind, ResourceState, ShortlistEntry,
};

use crate::channel::{ModuleKind, ModuleSpec, PluginRegistry};
use crate::config::ChannelConfig;
use crate::logic::{parse_expression, Fact, Rule, INFERENCE_RESULT};

pub const PROVISION_PUBLISHER: &str = "provision_publisher";
pub const METRICS_PUBLISHER: &str = "metrics_publisher";

/// Register the stdlib plugins, bound to `endpoints`:
/// sources `job_queue`, `resource_manifest`, `budget`; transforms
/// `shortlist`, `allocate`; publishers `provision`, `metrics`.
pub fn register(registry: &mut PluginRegistry, endpoints: Endpoints) {
    let e = endpoints.clone();
    registry.register("job_queue", ModuleKind::Source, move |p| sources::job_queue(&e, p));
    let e = endpoints.clone();
    registry.register("resource_manifest", ModuleKind::Source, move |p| sources::resource_manifest(&e, p));
    let e = endpoints.clone();
    registry.register("budget", ModuleKind::Source, move |p| sources::budget(&e, p));
    registry.register("shortlist", ModuleKind::Transform, transforms::shortlist_module);
    registry.register("allocate", ModuleKind::Transform, transforms::allocate_module);
    let e = endpoints.clone();
    registry.register("provision", ModuleKind::Publisher, move |p| publishers::provision(&e, p));
    let e = endpoints;
    registry.register("metrics", ModuleKind::Publisher, move |p| publishers::metrics(&e, p));
}

/// The shipped facts and rules.
pub fn default_policy() -> (Vec<Fact>, Vec<Rule>) {
    let expr = |s: &str| parse_expression(s).expect("shipped policy parses");
    let facts = vec![
        Fact::new("have_work", expr(r#"count(product("allocation_plan")) > 0"#)),
        Fact::new("cloud_gate", expr(r#"product("budget").cloud_funds_remaining > 0"#)),
    ];
    let rules = vec![
        Rule::new("provision_when_work", expr(r#"fact("have_work")"#))
            .publish(PROVISION_PUBLISHER)
            .derive("provisioning_active"),
        Rule::new("monitor_always", expr("true")).publish(METRICS_PUBLISHER),
    ];
    (facts, rules)
}

/// A complete provisioning channel using the stdlib plugins with default
/// endpoints.
pub fn provisioning_channel(id: &str, source_period: Duration) -> ChannelConfig {
    let (facts, rules) = default_policy();
    ChannelConfig {
        channel_id: id.to_string(),
        sources: vec![
            ModuleSpec::source("jobs", "job_queue", &[IDLE_JOBS]).with_period(source_period),
            ModuleSpec::source("manifest", "resource_manifest", &[RESOURCES]).with_period(source_period),
            ModuleSpec::source("accounting", "budget", &[BUDGET]).with_period(source_period),
        ],
        source_proxies: Vec::new(),
        transforms: vec![
            ModuleSpec::transform("shortlister", "shortlist", &[IDLE_JOBS, RESOURCES], &[SHORTLIST]),
            ModuleSpec::transform("allocator", "allocate", &[SHORTLIST, BUDGET, RESOURCES], &[ALLOCATION_PLAN])
                .with_params(json!({"cap": DEFAULT_CAP})),
        ],
        facts,
        rules,
        publishers: vec![
            ModuleSpec::publisher(PROVISION_PUBLISHER, "provision", &[ALLOCATION_PLAN, INFERENCE_RESULT]),
            ModuleSpec::publisher(METRICS_PUBLISHER, "metrics", &[IDLE_JOBS, BUDGET, RESOURCES]),
        ],
    }
}
