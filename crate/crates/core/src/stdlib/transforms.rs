//! Transforms: candidate shortlisting and even-split allocation.

use std::collections::BTreeMap;

use serde_json::Value;

use super::sources::{BUDGET, IDLE_JOBS, RESOURCES};
use super::types::{
    to_value, BudgetStatus, JobBundle, Justification, ProvisionRequest, ResourceClass, ResourceKind, ShortlistEntry,
};
use crate::channel::{input, param, Inputs, InvokeContext, Module, Outputs};

pub const SHORTLIST: &str = "shortlist";
pub const ALLOCATION_PLAN: &str = "allocation_plan";
pub const DEFAULT_CAP: u64 = 100;

/// Per bundle, the preferred classes that are up and have headroom, in the
/// bundle's preference order.
pub fn shortlist(bundles: &[JobBundle], resources: &[ResourceClass]) -> Vec<ShortlistEntry> {
    let by_id: BTreeMap<&str, &ResourceClass> = resources.iter().map(|r| (r.class_id.as_str(), r)).collect();
    bundles
        .iter()
        .map(|b| {
            let mut eligible: Vec<String> = Vec::new();
            for c in &b.preferred_resources {
                if by_id.get(c.as_str()).is_some_and(|r| r.available()) && !eligible.contains(c) {
                    eligible.push(c.clone());
                }
            }
            ShortlistEntry {
                bundle_id: b.bundle_id.clone(),
                count: b.count,
                cpus: b.requirements.cpus,
                memory_mb: b.requirements.memory_mb,
                wall_hours: b.requirements.wall_hours,
                eligible,
            }
        })
        .collect()
}

/// Split `total` in proportion to integer `weights` by the largest-remainder
/// method. Equal remainders go to the lower index.
pub fn largest_remainder(total: u64, weights: &[u64]) -> Vec<u64> {
    let sum: u128 = weights.iter().map(|&w| w as u128).sum();
    if sum == 0 {
        return vec![0; weights.len()];
    }
    let mut shares = Vec::with_capacity(weights.len());
    let mut rems = Vec::with_capacity(weights.len());
    for (i, &w) in weights.iter().enumerate() {
        let q = total as u128 * w as u128;
        shares.push((q / sum) as u64);
        rems.push((q % sum, i));
    }
    let left = total - shares.iter().sum::<u64>();
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in rems.iter().take(left as usize) {
        shares[i] += 1;
    }
    shares
}

#[derive(Debug, Clone, Copy)]
struct Pools {
    funds: f64,
    allocation: f64,
}

fn cost(class: &ResourceClass, slots: u64, wall_hours: f64) -> (f64, f64) {
    match class.kind {
        ResourceKind::Cloud => (slots as f64 * class.unit_cost * wall_hours, 0.0),
        ResourceKind::Hpc => (0.0, slots as f64 * wall_hours),
        ResourceKind::Grid => (0.0, 0.0),
    }
}

/// Plan provisioning requests for every shortlisted bundle, in bundle id
/// order. Funds, allocation and headroom committed to one bundle are not
/// available to the next.
pub fn allocate(
    shortlist: &[ShortlistEntry],
    budget: &BudgetStatus,
    resources: &[ResourceClass],
    cap: u64,
) -> Vec<ProvisionRequest> {
    let classes: BTreeMap<&str, &ResourceClass> = resources.iter().map(|r| (r.class_id.as_str(), r)).collect();
    let mut headroom: BTreeMap<&str, u64> = resources.iter().map(|r| (r.class_id.as_str(), r.headroom())).collect();
    let mut pools = Pools { funds: budget.cloud_funds_remaining, allocation: budget.hpc_allocation_remaining };
    let mut entries: Vec<&ShortlistEntry> = shortlist.iter().collect();
    entries.sort_by(|a, b| a.bundle_id.cmp(&b.bundle_id));

    let mut plan = Vec::new();
    for entry in entries {
        let mut active: Vec<&str> =
            entry.eligible.iter().map(String::as_str).filter(|c| classes.contains_key(c)).collect();
        active.sort_unstable();
        active.dedup();
        let mut just = Justification::default();
        let mut remaining = entry.count.min(cap);

        while !active.is_empty() {
            just.iterations += 1;
            let shares = largest_remainder(remaining, &vec![1; active.len()]);

            let mut trial = pools;
            let mut failing = Vec::new();
            for (&c, &s) in active.iter().zip(&shares) {
                if s == 0 {
                    continue;
                }
                let (f, a) = cost(classes[c], s, entry.wall_hours);
                if f > trial.funds {
                    failing.push((c, "insufficient cloud funds"));
                } else if a > trial.allocation {
                    failing.push((c, "insufficient hpc allocation"));
                } else {
                    trial.funds -= f;
                    trial.allocation -= a;
                }
            }
            if !failing.is_empty() {
                for (c, why) in failing {
                    active.retain(|x| *x != c);
                    just.shares.insert(c.to_string(), 0);
                    just.excluded.insert(c.to_string(), why.to_string());
                }
                continue;
            }

            let over: Vec<(&str, u64)> = active
                .iter()
                .zip(&shares)
                .filter(|(c, s)| **s > headroom[**c])
                .map(|(c, _)| (*c, headroom[*c]))
                .collect();
            if !over.is_empty() {
                for (c, h) in over {
                    active.retain(|x| *x != c);
                    just.shares.insert(c.to_string(), h);
                    remaining -= h;
                    if h == 0 {
                        just.excluded.insert(c.to_string(), "no headroom".into());
                    }
                }
                continue;
            }

            for (&c, &s) in active.iter().zip(&shares) {
                just.shares.insert(c.to_string(), s);
            }
            break;
        }

        for (c, &s) in &just.shares {
            if s == 0 {
                continue;
            }
            let class = classes[c.as_str()];
            let (f, a) = cost(class, s, entry.wall_hours);
            pools.funds -= f;
            pools.allocation -= a;
            *headroom.get_mut(c.as_str()).expect("known class") -= s;
        }
        for (c, &s) in &just.shares {
            if s > 0 {
                plan.push(ProvisionRequest {
                    class_id: c.clone(),
                    slots: s,
                    for_bundle: entry.bundle_id.clone(),
                    cpus: entry.cpus,
                    memory_mb: entry.memory_mb,
                    justification: just.clone(),
                });
            }
        }
    }
    plan
}

pub(crate) fn shortlist_module(_params: &Value) -> Result<Box<dyn Module>, String> {
    Ok(Box::new(|_: &InvokeContext, inputs: &Inputs| {
        let bundles: Vec<JobBundle> = input(inputs, IDLE_JOBS)?;
        let resources: Vec<ResourceClass> = input(inputs, RESOURCES)?;
        Ok(Outputs::from([(SHORTLIST.to_string(), to_value(&shortlist(&bundles, &resources)))]))
    }))
}

pub(crate) fn allocate_module(params: &Value) -> Result<Box<dyn Module>, String> {
    let cap: u64 = param(params, "cap", DEFAULT_CAP)?;
    if cap == 0 {
        return Err("parameter `cap` must be at least 1".into());
    }
    Ok(Box::new(move |_: &InvokeContext, inputs: &Inputs| {
        let entries: Vec<ShortlistEntry> = input(inputs, SHORTLIST)?;
        let budget: BudgetStatus = input(inputs, BUDGET)?;
        let resources: Vec<ResourceClass> = input(inputs, RESOURCES)?;
        let plan = allocate(&entries, &budget, &resources, cap);
        Ok(Outputs::from([(ALLOCATION_PLAN.to_string(), to_value(&plan))]))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stdlib::types::{Requirements, ResourceState};

    fn class(id: &str, kind: ResourceKind, unit_cost: f64, cap: u64) -> ResourceClass {
        ResourceClass {
            class_id: id.into(),
            kind,
            price_performance: 1.0,
            unit_cost,
            capacity_limit: cap,
            current_occupancy: 0,
            state: ResourceState::Up,
        }
    }

    fn entry(count: u64, eligible: &[&str]) -> ShortlistEntry {
        ShortlistEntry {
            bundle_id: "b".into(),
            count,
            cpus: 1,
            memory_mb: 2000,
            wall_hours: 1.0,
            eligible: eligible.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn split(plan: &[ProvisionRequest]) -> Vec<(String, u64)> {
        plan.iter().map(|r| (r.class_id.clone(), r.slots)).collect()
    }

    fn rich() -> BudgetStatus {
        BudgetStatus { cloud_funds_remaining: 1e9, hpc_allocation_remaining: 1e9 }
    }

    fn classes() -> Vec<ResourceClass> {
        vec![
            class("aws", ResourceKind::Cloud, 0.5, 1000),
            class("nersc", ResourceKind::Hpc, 1.0, 1000),
            class("grid_a", ResourceKind::Grid, 0.0, 1000),
            class("grid_b", ResourceKind::Grid, 0.0, 1000),
            class("grid_c", ResourceKind::Grid, 0.0, 1000),
        ]
    }

    #[test]
    fn even_splits() {
        let r = classes();
        assert_eq!(
            split(&allocate(&[entry(10, &["aws", "nersc"])], &rich(), &r, 100)),
            [("aws".into(), 5), ("nersc".into(), 5)]
        );
        assert_eq!(
            split(&allocate(&[entry(7, &["nersc", "aws"])], &rich(), &r, 100)),
            [("aws".into(), 4), ("nersc".into(), 3)]
        );
        assert_eq!(
            split(&allocate(&[entry(10, &["grid_c", "grid_a", "grid_b"])], &rich(), &r, 100)),
            [("grid_a".into(), 4), ("grid_b".into(), 3), ("grid_c".into(), 3)]
        );
    }

    #[test]
    fn exhausted_funds_redistribute() {
        let broke = BudgetStatus { cloud_funds_remaining: 0.0, hpc_allocation_remaining: 1e9 };
        let plan = allocate(&[entry(7, &["aws", "nersc"])], &broke, &classes(), 100);
        assert_eq!(split(&plan), [("nersc".into(), 7)]);
        let j = &plan[0].justification;
        assert_eq!(j.shares["aws"], 0);
        assert_eq!(j.excluded["aws"], "insufficient cloud funds");
        assert_eq!(j.iterations, 2);
    }

    #[test]
    fn headroom_clamps_and_cap_limits() {
        let mut r = classes();
        r[2].current_occupancy = 998; // grid_a has 2 slots left
        let plan = allocate(&[entry(300, &["grid_a", "grid_b", "grid_c"])], &rich(), &r, 100);
        assert_eq!(split(&plan), [("grid_a".into(), 2), ("grid_b".into(), 49), ("grid_c".into(), 49)]);
        assert!(plan[0].justification.iterations <= 3);
    }

    #[test]
    fn budget_is_shared_across_bundles() {
        let budget = BudgetStatus { cloud_funds_remaining: 3.0, hpc_allocation_remaining: 0.0 };
        let mut a = entry(6, &["aws"]);
        a.bundle_id = "a".into();
        let mut b = entry(6, &["aws"]);
        b.bundle_id = "b".into();
        // 6 slots * 0.5 * 1h = 3.0 funds: the first bundle takes it all
        let plan = allocate(&[b, a], &budget, &classes(), 100);
        assert_eq!(plan.len(), 1);
        assert_eq!(plan[0].for_bundle, "a");
    }

    #[test]
    fn shortlist_filters_and_keeps_order() {
        let mut r = classes();
        r[1].state = ResourceState::Down;
        r[3].current_occupancy = 1000;
        let bundle = JobBundle {
            bundle_id: "x".into(),
            count: 3,
            requirements: Requirements { cpus: 1, memory_mb: 1, wall_hours: 1.0 },
            preferred_resources: vec!["grid_c".into(), "nersc".into(), "grid_b".into(), "aws".into()],
        };
        let s = shortlist(&[bundle], &r);
        assert_eq!(s[0].eligible, ["grid_c", "aws"]);
    }

    #[test]
    fn largest_remainder_weighted() {
        assert_eq!(largest_remainder(10, &[1, 1, 1]), [4, 3, 3]);
        assert_eq!(largest_remainder(10, &[2, 1, 1]), [5, 3, 2]);
        assert_eq!(largest_remainder(0, &[1, 1]), [0, 0]);
        assert_eq!(largest_remainder(5, &[0, 0]), [0, 0]);
    }
}
