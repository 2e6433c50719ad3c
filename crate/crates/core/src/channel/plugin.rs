//! The module contract shared by sources, transforms and publishers, and the
//! registry that turns configuration into module instances.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::clock::Timestamp;
use crate::dataspace::{DataProduct, GenerationId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleKind {
    Source,
    SourceProxy,
    Transform,
    Publisher,
}

impl fmt::Display for ModuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModuleKind::Source => "source",
            ModuleKind::SourceProxy => "source_proxy",
            ModuleKind::Transform => "transform",
            ModuleKind::Publisher => "publisher",
        })
    }
}

/// Declared shape of one module in a channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ModuleSpec {
    pub kind: ModuleKind,
    pub name: String,
    /// Registered plugin identifier.
    pub plugin: String,
    pub parameters: Value,
    pub consumes: Vec<String>,
    pub produces: Vec<String>,
    /// Sources only.
    pub period: Option<Duration>,
}

impl ModuleSpec {
    pub fn source(name: &str, plugin: &str, produces: &[&str]) -> Self {
        ModuleSpec {
            kind: ModuleKind::Source,
            name: name.into(),
            plugin: plugin.into(),
            parameters: Value::Object(Default::default()),
            consumes: Vec::new(),
            produces: produces.iter().map(|s| s.to_string()).collect(),
            period: None,
        }
    }

    pub fn transform(name: &str, plugin: &str, consumes: &[&str], produces: &[&str]) -> Self {
        ModuleSpec {
            kind: ModuleKind::Transform,
            consumes: consumes.iter().map(|s| s.to_string()).collect(),
            ..ModuleSpec::source(name, plugin, produces)
        }
    }

    pub fn publisher(name: &str, plugin: &str, consumes: &[&str]) -> Self {
        ModuleSpec {
            kind: ModuleKind::Publisher,
            consumes: consumes.iter().map(|s| s.to_string()).collect(),
            ..ModuleSpec::source(name, plugin, &[])
        }
    }

    pub fn with_params(mut self, params: Value) -> Self {
        self.parameters = params;
        self
    }

    pub fn with_period(mut self, period: Duration) -> Self {
        self.period = Some(period);
        self
    }
}

/// What a module sees about the call it is serving.
#[derive(Debug, Clone)]
pub struct InvokeContext {
    pub channel: String,
    pub module: String,
    pub now: Timestamp,
    /// Generation of the cycle's block; `None` for source invocations.
    pub generation: Option<GenerationId>,
}

pub type Inputs = BTreeMap<String, Arc<DataProduct>>;
pub type Outputs = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModuleError {
    #[error("missing input `{0}`")]
    MissingInput(String),
    #[error("adapter unavailable: {0}")]
    AdapterUnavailable(String),
    #[error("bad input `{product}`: {message}")]
    BadInput { product: String, message: String },
    #[error("{0}")]
    Failed(String),
}

/// A plugin instance. Sources receive an empty input map; publishers usually
/// return an empty output map.
pub trait Module: Send {
    fn invoke(&mut self, ctx: &InvokeContext, inputs: &Inputs) -> Result<Outputs, ModuleError>;
}

impl<F> Module for F
where
    F: FnMut(&InvokeContext, &Inputs) -> Result<Outputs, ModuleError> + Send,
{
    fn invoke(&mut self, ctx: &InvokeContext, inputs: &Inputs) -> Result<Outputs, ModuleError> {
        self(ctx, inputs)
    }
}

pub type Factory = Arc<dyn Fn(&Value) -> Result<Box<dyn Module>, String> + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PluginError {
    #[error("unknown plugin `{0}`")]
    UnknownPlugin(String),
    #[error("plugin `{plugin}` is a {registered} plugin, configured as {requested}")]
    WrongKind { plugin: String, registered: ModuleKind, requested: ModuleKind },
    #[error("plugin `{plugin}` rejected its parameters: {message}")]
    ParameterError { plugin: String, message: String },
}

#[derive(Clone)]
struct Registration {
    kind: ModuleKind,
    factory: Factory,
}

/// Named module factories, registered at startup.
#[derive(Clone, Default)]
pub struct PluginRegistry {
    entries: BTreeMap<String, Registration>,
}

impl fmt::Debug for PluginRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map().entries(self.entries.iter().map(|(k, v)| (k, v.kind))).finish()
    }
}

impl PluginRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register `factory` under `name`. It receives the module's
    /// `parameters` and returns the module, or a message explaining why the
    /// parameters are unusable.
    ///
    /// ```
    /// use decision_engine::channel::{Inputs, InvokeContext, ModuleKind, Outputs, PluginRegistry};
    /// use serde_json::json;
    ///
    /// let mut registry = PluginRegistry::new();
    /// registry.register("constant", ModuleKind::Source, |params| {
    ///     let value = params.get("value").cloned().unwrap_or(json!(0));
    ///     Ok(Box::new(move |_: &InvokeContext, _: &Inputs| {
    ///         Ok(Outputs::from([("x".to_string(), value.clone())]))
    ///     }))
    /// });
    /// assert!(registry.contains("constant"));
    /// ```
    pub fn register<F>(&mut self, name: &str, kind: ModuleKind, factory: F)
    where
        F: Fn(&Value) -> Result<Box<dyn Module>, String> + Send + Sync + 'static,
    {
        self.entries.insert(name.to_string(), Registration { kind, factory: Arc::new(factory) });
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn instantiate(&self, spec: &ModuleSpec) -> Result<Box<dyn Module>, PluginError> {
        let reg = self.entries.get(&spec.plugin).ok_or_else(|| PluginError::UnknownPlugin(spec.plugin.clone()))?;
        if reg.kind != spec.kind {
            return Err(PluginError::WrongKind {
                plugin: spec.plugin.clone(),
                registered: reg.kind,
                requested: spec.kind,
            });
        }
        (reg.factory)(&spec.parameters)
            .map_err(|message| PluginError::ParameterError { plugin: spec.plugin.clone(), message })
    }
}

/// Read an optional parameter, falling back to `default` when absent.
pub fn param<T: serde::de::DeserializeOwned>(params: &Value, key: &str, default: T) -> Result<T, String> {
    match params.get(key) {
        None | Some(Value::Null) => Ok(default),
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| format!("parameter `{key}`: {e}")),
    }
}

/// Deserialize a product value into a typed input.
pub fn input<T: serde::de::DeserializeOwned>(inputs: &Inputs, name: &str) -> Result<T, ModuleError> {
    let p = inputs.get(name).ok_or_else(|| ModuleError::MissingInput(name.to_string()))?;
    serde_json::from_value(p.value.clone())
        .map_err(|e| ModuleError::BadInput { product: name.to_string(), message: e.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn registry_checks_kind_and_params() {
        let mut r = PluginRegistry::new();
        r.register("const", ModuleKind::Source, |p| {
            let v: f64 = param(p, "value", 1.0)?;
            Ok(Box::new(move |_: &InvokeContext, _: &Inputs| Ok(Outputs::from([("x".to_string(), json!(v))]))))
        });
        let spec = ModuleSpec::source("s", "const", &["x"]);
        assert!(r.instantiate(&spec).is_ok());
        let bad = spec.clone().with_params(json!({"value": "nope"}));
        assert!(matches!(r.instantiate(&bad), Err(PluginError::ParameterError { .. })));
        let wrong = ModuleSpec::transform("t", "const", &[], &["x"]);
        assert!(matches!(r.instantiate(&wrong), Err(PluginError::WrongKind { .. })));
        let unknown = ModuleSpec::source("s", "nope", &["x"]);
        assert_eq!(r.instantiate(&unknown).err(), Some(PluginError::UnknownPlugin("nope".into())));
    }
}
