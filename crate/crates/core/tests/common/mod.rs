//! Small plugins and channel layouts shared by the integration tests.
#![allow(dead_code)]

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::{Condvar, Mutex};
use serde_json::{json, Value};

use decision_engine::channel::{Inputs, InvokeContext, ModuleError, ModuleKind, ModuleSpec, Outputs, PluginRegistry};
use decision_engine::config::ChannelConfig;
use decision_engine::logic::{parse_expression, Fact, Rule};

pub fn out(pairs: &[(&str, Value)]) -> Outputs {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

/// Counting semaphore a transform can block on.
#[derive(Default)]
pub struct Gate {
    /// (permits, entered)
    state: Mutex<(u64, u64)>,
    cv: Condvar,
}

impl Gate {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn release(&self, n: u64) {
        self.state.lock().0 += n;
        self.cv.notify_all();
    }

    pub fn pass(&self) {
        let mut s = self.state.lock();
        s.1 += 1;
        self.cv.notify_all();
        while s.0 == 0 {
            self.cv.wait(&mut s);
        }
        s.0 -= 1;
    }

    /// Wait until `n` callers have entered, in total.
    pub fn wait_entered(&self, n: u64) {
        let mut s = self.state.lock();
        while s.1 < n {
            self.cv.wait_for(&mut s, Duration::from_millis(50));
        }
    }

    pub fn entered(&self) -> u64 {
        self.state.lock().1
    }
}

/// Plugins used across the tests:
/// - `counter` (source): emits `x` = 1, 2, 3, ...
/// - `echo` (transform): `y` = `x`
/// - `gated_echo` (transform): like `echo` but blocks on `gate` first
/// - `sink` (publisher): records the `y` it saw in `seen`
/// - `fail_source`, `fail_transform`, `fail_publisher`: always error
/// - `panic_source`, `panic_transform`, `panic_publisher`: always panic
pub struct Kit {
    pub registry: PluginRegistry,
    pub gate: Arc<Gate>,
    pub seen: Arc<Mutex<Vec<Value>>>,
    pub source_calls: Arc<AtomicU64>,
}

pub fn kit() -> Kit {
    let mut r = PluginRegistry::new();
    let gate = Gate::new();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let calls = Arc::new(AtomicU64::new(0));

    let c = calls.clone();
    r.register("counter", ModuleKind::Source, move |_| {
        let c = c.clone();
        Ok(Box::new(move |_: &InvokeContext, _: &Inputs| {
            let n = c.fetch_add(1, Ordering::SeqCst) + 1;
            Ok(out(&[("x", json!(n))]))
        }))
    });
    r.register("echo", ModuleKind::Transform, |_| {
        Ok(Box::new(|_: &InvokeContext, i: &Inputs| Ok(out(&[("y", i["x"].value.clone())]))))
    });
    let g = gate.clone();
    r.register("gated_echo", ModuleKind::Transform, move |_| {
        let g = g.clone();
        Ok(Box::new(move |_: &InvokeContext, i: &Inputs| {
            g.pass();
            Ok(out(&[("y", i["x"].value.clone())]))
        }))
    });
    let s = seen.clone();
    r.register("sink", ModuleKind::Publisher, move |_| {
        let s = s.clone();
        Ok(Box::new(move |_: &InvokeContext, i: &Inputs| {
            s.lock().push(i["y"].value.clone());
            Ok(Outputs::new())
        }))
    });
    for (name, kind) in [
        ("fail_source", ModuleKind::Source),
        ("fail_transform", ModuleKind::Transform),
        ("fail_publisher", ModuleKind::Publisher),
    ] {
        r.register(name, kind, |_| {
            Ok(Box::new(|_: &InvokeContext, _: &Inputs| Err(ModuleError::Failed("always fails".into()))))
        });
    }
    for (name, kind) in [
        ("panic_source", ModuleKind::Source),
        ("panic_transform", ModuleKind::Transform),
        ("panic_publisher", ModuleKind::Publisher),
    ] {
        r.register(name, kind, |_| {
            Ok(Box::new(|_: &InvokeContext, _: &Inputs| -> Result<Outputs, ModuleError> { panic!("module blew up") }))
        });
    }
    Kit { registry: r, gate, seen, source_calls: calls }
}

/// `src` (counter) -> `t1` (echo) -> rule `go` -> `sink`.
pub fn simple_channel(id: &str) -> ChannelConfig {
    simple_channel_with(id, "counter", "echo", "sink")
}

pub fn simple_channel_with(id: &str, source: &str, transform: &str, publisher: &str) -> ChannelConfig {
    ChannelConfig {
        channel_id: id.into(),
        sources: vec![ModuleSpec::source("src", source, &["x"]).with_period(Duration::from_secs(10))],
        source_proxies: vec![],
        transforms: vec![ModuleSpec::transform("t1", transform, &["x"], &["y"])],
        facts: vec![Fact::new("has_y", parse_expression(r#"product("y") >= 0"#).unwrap())],
        rules: vec![Rule::new("go", parse_expression(r#"fact("has_y")"#).unwrap()).publish("sink")],
        publishers: vec![ModuleSpec::publisher("sink", publisher, &["y"])],
    }
}
