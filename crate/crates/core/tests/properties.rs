//! Property tests for the data space, the expression syntax and the
//! allocation arithmetic.

use std::collections::BTreeMap;
use std::sync::Arc;

use proptest::prelude::*;
use serde_json::{json, Value};

use decision_engine::clock::{ManualClock, Timestamp, SIM_EPOCH};
use decision_engine::dataspace::{read_archive, CycleOutcomeKind, DataProduct, DataSpace};
use decision_engine::logic::{parse_expression, Aggregate, BinaryOp, Expr, Literal, UnaryOp};
use decision_engine::stdlib::{
    allocate, largest_remainder, BudgetStatus, ResourceClass, ResourceKind, ResourceState, ShortlistEntry,
};

fn product(name: &str, value: Value) -> DataProduct {
    DataProduct::new(name, value, "test", SIM_EPOCH)
}

#[derive(Debug, Clone)]
enum Op {
    Put(u8, i64),
    Snapshot,
}

fn ops() -> impl Strategy<Value = Vec<Op>> {
    prop::collection::vec(
        prop_oneof![3 => (0u8..4, any::<i64>()).prop_map(|(n, v)| Op::Put(n, v)), 1 => Just(Op::Snapshot)],
        1..60,
    )
}

proptest! {
    #[test]
    fn snapshots_never_see_later_puts(ops in ops()) {
        let space = DataSpace::in_memory(Arc::new(ManualClock::new(SIM_EPOCH)));
        let h = space.create_space("c").unwrap();
        let mut model: BTreeMap<String, Value> = BTreeMap::new();
        let mut views = Vec::new();
        for op in ops {
            match op {
                Op::Put(n, v) => {
                    let name = format!("p{n}");
                    h.put(product(&name, json!(v))).unwrap();
                    model.insert(name, json!(v));
                }
                Op::Snapshot => {
                    let (_, view) = h.snapshot().unwrap();
                    view.lock_and_archive(CycleOutcomeKind::Success).unwrap();
                    views.push((view, model.clone()));
                }
            }
        }
        for (view, expected) in views {
            let seen: BTreeMap<String, Value> =
                view.products().into_iter().map(|(k, p)| (k, p.value.clone())).collect();
            prop_assert_eq!(seen, expected);
        }
    }

    #[test]
    fn archive_file_round_trips(values in prop::collection::vec(prop::collection::btree_map("[a-z]{1,6}", any::<i32>(), 1..5), 1..12)) {
        let dir = tempfile::tempdir().unwrap();
        let clock = Arc::new(ManualClock::new(SIM_EPOCH));
        let space = DataSpace::with_archive_dir(clock.clone(), dir.path());
        let h = space.create_space("chan").unwrap();
        for (i, block) in values.iter().enumerate() {
            for (k, v) in block {
                h.put(product(k, json!(v))).unwrap();
            }
            let (_, view) = h.snapshot().unwrap();
            clock.set(Timestamp::from_millis(SIM_EPOCH.millis() + 1000 * (i as i64 + 1)));
            let outcome = if i % 3 == 0 { CycleOutcomeKind::Success } else { CycleOutcomeKind::TransformError };
            view.lock_and_archive(outcome).unwrap();
        }
        let from_disk = read_archive(&h.archive_file().unwrap()).unwrap();
        let in_memory: Vec<_> = h.archive().iter().map(|r| (**r).clone()).collect();
        prop_assert_eq!(from_disk.len(), values.len());
        prop_assert_eq!(from_disk, in_memory);
    }
}

fn ident() -> impl Strategy<Value = String> {
    "[a-z_][a-z0-9_]{0,6}"
        .prop_filter("keyword", |s| !["and", "or", "not", "in", "true", "false"].contains(&s.as_str()))
}

fn leaf() -> impl Strategy<Value = Expr> {
    prop_oneof![
        (0.0f64..1e9).prop_map(Expr::num),
        any::<bool>().prop_map(Expr::boolean),
        "[ -~\t\n]{0,8}".prop_map(|s| Expr::Literal(Literal::Str(s))),
        ("[a-z_ \"\\\\]{1,8}", prop::collection::vec(ident(), 0..3))
            .prop_map(|(name, path)| Expr::Product { name, path }),
        ("[a-z_]{1,8}", prop::collection::vec(ident(), 0..2)).prop_map(|(name, path)| Expr::Fact { name, path }),
    ]
}

fn expr() -> impl Strategy<Value = Expr> {
    let ops = [
        BinaryOp::Or,
        BinaryOp::And,
        BinaryOp::Lt,
        BinaryOp::Le,
        BinaryOp::Gt,
        BinaryOp::Ge,
        BinaryOp::Eq,
        BinaryOp::Ne,
        BinaryOp::In,
        BinaryOp::Add,
        BinaryOp::Sub,
        BinaryOp::Mul,
        BinaryOp::Div,
    ];
    leaf().prop_recursive(4, 32, 2, move |inner| {
        prop_oneof![
            (prop::sample::select(ops.to_vec()), inner.clone(), inner.clone())
                .prop_map(|(op, l, r)| Expr::binary(op, l, r)),
            (prop::bool::ANY, inner.clone()).prop_map(|(neg, e)| Expr::Unary {
                op: if neg { UnaryOp::Neg } else { UnaryOp::Not },
                operand: Box::new(e)
            }),
            (
                prop::sample::select(vec![Aggregate::Count, Aggregate::Sum, Aggregate::Min, Aggregate::Max]),
                inner,
                prop::option::of(ident())
            )
                .prop_map(|(func, arg, field)| Expr::Call { func, arg: Box::new(arg), field }),
        ]
    })
}

proptest! {
    #[test]
    fn display_then_parse_is_identity(e in expr()) {
        let text = e.to_string();
        let back = parse_expression(&text).map_err(|err| TestCaseError::fail(format!("{text}: {err}")))?;
        prop_assert_eq!(back, e);
    }
}

fn quota_bounds_hold(total: u64, weights: &[u64], shares: &[u64]) -> bool {
    let w: u64 = weights.iter().sum();
    shares.iter().zip(weights).all(|(&s, &wi)| {
        let exact = total as f64 * wi as f64 / w as f64;
        (s as f64) >= exact.floor() && (s as f64) <= exact.ceil()
    })
}

fn grid(id: String, capacity: u64, occupancy: u64) -> ResourceClass {
    ResourceClass {
        class_id: id,
        kind: ResourceKind::Grid,
        price_performance: 1.0,
        unit_cost: 0.0,
        capacity_limit: capacity,
        current_occupancy: occupancy.min(capacity),
        state: ResourceState::Up,
    }
}

proptest! {
    #[test]
    fn largest_remainder_respects_quotas(total in 0u64..10_000, weights in prop::collection::vec(1u64..50, 1..8)) {
        let shares = largest_remainder(total, &weights);
        prop_assert_eq!(shares.iter().sum::<u64>(), total);
        prop_assert!(quota_bounds_hold(total, &weights, &shares));
    }

    #[test]
    fn allocation_is_even_and_bounded(
        count in 1u64..500,
        cap in 1u64..200,
        classes in prop::collection::btree_map("[a-z]{1,4}", (0u64..120, 0u64..120), 1..6),
    ) {
        let resources: Vec<ResourceClass> =
            classes.iter().map(|(id, &(c, o))| grid(id.clone(), c, o)).collect();
        let entry = ShortlistEntry {
            bundle_id: "b".into(),
            count,
            cpus: 1,
            memory_mb: 512,
            wall_hours: 1.0,
            eligible: classes.keys().rev().cloned().collect(),
        };
        let budget = BudgetStatus { cloud_funds_remaining: 0.0, hpc_allocation_remaining: 0.0 };
        let plan = allocate(&[entry], &budget, &resources, cap);
        let total: u64 = plan.iter().map(|r| r.slots).sum();
        let headroom: u64 = resources.iter().map(|r| r.capacity_limit - r.current_occupancy).sum();
        prop_assert_eq!(total, count.min(cap).min(headroom));
        for r in &plan {
            let class = resources.iter().find(|c| c.class_id == r.class_id).unwrap();
            prop_assert!(r.slots <= class.capacity_limit - class.current_occupancy);
        }
        // Classes that were not clamped by headroom split evenly.
        let unclamped: Vec<u64> = resources
            .iter()
            .filter(|c| {
                let got = plan.iter().find(|r| r.class_id == c.class_id).map_or(0, |r| r.slots);
                got < c.capacity_limit - c.current_occupancy
            })
            .map(|c| plan.iter().find(|r| r.class_id == c.class_id).map_or(0, |r| r.slots))
            .collect();
        if let (Some(lo), Some(hi)) = (unclamped.iter().min(), unclamped.iter().max()) {
            prop_assert!(hi - lo <= 1, "unclamped shares {:?}", unclamped);
        }
    }
}
