//! Scenario files: providers, budget, job waves.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stdlib::{Requirements, ResourceKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderSpec {
    pub class_id: String,
    pub kind: ResourceKind,
    pub capacity: u64,
    #[serde(default)]
    pub unit_cost: f64,
    /// Seconds from request to a usable slot.
    #[serde(default)]
    pub startup_latency: f64,
    /// Probability per slot-hour that a slot is preempted (grid only).
    #[serde(default)]
    pub preemption_rate: f64,
    #[serde(default = "one")]
    pub price_performance: f64,
    #[serde(default = "up")]
    pub up: bool,
}

fn one() -> f64 {
    1.0
}

fn up() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobWave {
    /// Seconds after the start of the run.
    pub at: f64,
    pub count: u64,
    pub requirements: Requirements,
    pub preferred_resources: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimScenario {
    pub name: String,
    pub seed: u64,
    /// Seconds of simulated time before the run gives up.
    pub duration: f64,
    #[serde(default = "default_idle_timeout")]
    pub idle_timeout: f64,
    pub initial_funds: f64,
    pub initial_allocation: f64,
    #[serde(default)]
    pub providers: Vec<ProviderSpec>,
    #[serde(default)]
    pub job_waves: Vec<JobWave>,
}

fn default_idle_timeout() -> f64 {
    300.0
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{0}")]
    Io(String),
    #[error("scenario syntax: {0}")]
    Syntax(String),
    #[error("scenario `{name}`: {message}")]
    Invalid { name: String, message: String },
}

impl SimScenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let s: SimScenario = toml::from_str(text).map_err(|e| ScenarioError::Syntax(e.to_string()))?;
        s.check()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn total_jobs(&self) -> u64 {
        self.job_waves.iter().map(|w| w.count).sum()
    }

    pub fn check(&self) -> Result<(), ScenarioError> {
        let bad = |message: String| Err(ScenarioError::Invalid { name: self.name.clone(), message });
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.duration) || !finite_nonneg(self.idle_timeout) {
            return bad("duration and idle_timeout must be non-negative".into());
        }
        if !finite_nonneg(self.initial_funds) || !finite_nonneg(self.initial_allocation) {
            return bad("initial funds and allocation must be non-negative".into());
        }
        let mut ids = BTreeSet::new();
        for p in &self.providers {
            if !ids.insert(p.class_id.as_str()) {
                return bad(format!("duplicate provider `{}`", p.class_id));
            }
            if !finite_nonneg(p.unit_cost) || !finite_nonneg(p.startup_latency) {
                return bad(format!("provider `{}`: costs and latency must be non-negative", p.class_id));
            }
            if !(0.0..=1.0).contains(&p.preemption_rate) {
                return bad(format!("provider `{}`: preemption_rate must be in [0, 1]", p.class_id));
            }
            if p.preemption_rate > 0.0 && p.kind != ResourceKind::Grid {
                return bad(format!("provider `{}`: only grid classes are preempted", p.class_id));
            }
            if p.price_performance <= 0.0 {
                return bad(format!("provider `{}`: price_performance must be positive", p.class_id));
            }
        }
        for (i, w) in self.job_waves.iter().enumerate() {
            if w.preferred_resources.is_empty() {
                return bad(format!("job wave {i}: preferred_resources is empty"));
            }
            if let Some(c) = w.preferred_resources.iter().find(|c| !ids.contains(c.as_str())) {
                return bad(format!("job wave {i}: unknown resource class `{c}`"));
            }
            if !finite_nonneg(w.at) || !(w.requirements.wall_hours > 0.0 && w.requirements.wall_hours.is_finite()) {
                return bad(format!("job wave {i}: `at` must be ≥ 0 and wall_hours > 0"));
            }
        }
        Ok(())
    }
}
