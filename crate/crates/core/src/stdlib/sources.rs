//! Sources: job queue, resource manifest and budget.

use std::collections::BTreeMap;

use serde_json::Value;

use super::adapters::{lookup, Endpoints};
use super::types::{to_value, IdleJob, JobBundle};
use crate::channel::{param, Inputs, InvokeContext, Module, ModuleError, Outputs};

pub const IDLE_JOBS: &str = "idle_jobs";
pub const RESOURCES: &str = "resources";
pub const BUDGET: &str = "budget";

pub fn bundle_id(job: &IdleJob) -> String {
    let r = &job.requirements;
    format!("c{}-m{}-w{}-{}", r.cpus, r.memory_mb, r.wall_hours, job.preferred_resources.join("+"))
}

/// Group jobs with identical requirements and preferences. Bundles come out
/// ordered by id.
pub fn bundle_jobs(jobs: &[IdleJob]) -> Vec<JobBundle> {
    let mut bundles: BTreeMap<String, JobBundle> = BTreeMap::new();
    for job in jobs {
        let id = bundle_id(job);
        bundles
            .entry(id.clone())
            .or_insert_with(|| JobBundle {
                bundle_id: id,
                count: 0,
                requirements: job.requirements.clone(),
                preferred_resources: job.preferred_resources.clone(),
            })
            .count += 1;
    }
    bundles.into_values().collect()
}

fn endpoint(params: &Value) -> Result<String, String> {
    param(params, "endpoint", "default".to_string())
}

fn single(name: &str, value: Value) -> Outputs {
    Outputs::from([(name.to_string(), value)])
}

pub(crate) fn job_queue(endpoints: &Endpoints, params: &Value) -> Result<Box<dyn Module>, String> {
    let queue = lookup(&endpoints.queues, "queue", &endpoint(params)?)?;
    Ok(Box::new(move |_: &InvokeContext, _: &Inputs| {
        let jobs = queue.idle_jobs().map_err(ModuleError::AdapterUnavailable)?;
        Ok(single(IDLE_JOBS, to_value(&bundle_jobs(&jobs))))
    }))
}

pub(crate) fn resource_manifest(endpoints: &Endpoints, params: &Value) -> Result<Box<dyn Module>, String> {
    let manifest = lookup(&endpoints.manifests, "manifest", &endpoint(params)?)?;
    Ok(Box::new(move |_: &InvokeContext, _: &Inputs| {
        let mut classes = manifest.resources().map_err(ModuleError::AdapterUnavailable)?;
        classes.sort_by(|a, b| a.class_id.cmp(&b.class_id));
        Ok(single(RESOURCES, to_value(&classes)))
    }))
}

pub(crate) fn budget(endpoints: &Endpoints, params: &Value) -> Result<Box<dyn Module>, String> {
    let budget = lookup(&endpoints.budgets, "budget", &endpoint(params)?)?;
    Ok(Box::new(move |_: &InvokeContext, _: &Inputs| {
        let status = budget.budget().map_err(ModuleError::AdapterUnavailable)?;
        Ok(single(BUDGET, to_value(&status)))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stdlib::types::Requirements;

    fn job(wall: f64, prefs: &[&str]) -> IdleJob {
        IdleJob {
            requirements: Requirements { cpus: 1, memory_mb: 2000, wall_hours: wall },
            preferred_resources: prefs.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn groups_by_requirements_and_preferences() {
        let mut jobs = Vec::new();
        for i in 0..1400 {
            jobs.push(match i % 3 {
                0 => job(2.0, &["aws_zone1", "nersc"]),
                1 => job(1.5, &["grid_a", "grid_b", "grid_c"]),
                _ => job(1.0, &["nersc", "grid_a", "aws_zone1"]),
            });
        }
        let bundles = bundle_jobs(&jobs);
        assert_eq!(bundles.len(), 3);
        assert_eq!(bundles.iter().map(|b| b.count).sum::<u64>(), 1400);
        assert_eq!(bundles[0].bundle_id, "c1-m2000-w1-nersc+grid_a+aws_zone1");
        assert!(bundle_jobs(&[]).is_empty());
    }
}
