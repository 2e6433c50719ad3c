//! Engine and channel configuration: loading, validation, defaults.
//!
//! The file format is TOML; see `docs/config.md` for the annotated schema.
//! Fact and rule expressions are parsed at load time, structural validation
//! happens in [`validate_config`], which reports every problem it finds.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;

use crate::channel::{ModuleKind, ModuleSpec, PluginRegistry};
use crate::graph::{find_cycle, topo_order};
use crate::logic::{self, parse_expression, DependencyPlan, Fact, Rule, INFERENCE_RESULT};

/// Product written when a cycle fails, describing the failure.
pub const CYCLE_ERROR: &str = "cycle_error";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Simulated,
    Live,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceProxyBinding {
    pub name: String,
    pub source_channel: String,
    pub product_name: String,
    pub local_alias: String,
    pub max_staleness: Duration,
    pub period: Option<Duration>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelConfig {
    pub channel_id: String,
    pub sources: Vec<ModuleSpec>,
    pub source_proxies: Vec<SourceProxyBinding>,
    pub transforms: Vec<ModuleSpec>,
    pub facts: Vec<Fact>,
    pub rules: Vec<Rule>,
    pub publishers: Vec<ModuleSpec>,
}

impl ChannelConfig {
    pub fn new(channel_id: &str) -> Self {
        ChannelConfig {
            channel_id: channel_id.to_string(),
            sources: Vec::new(),
            source_proxies: Vec::new(),
            transforms: Vec::new(),
            facts: Vec::new(),
            rules: Vec::new(),
            publishers: Vec::new(),
        }
    }

    /// Names produced inside the channel by sources, proxies and transforms,
    /// with their producers.
    pub fn producers(&self) -> BTreeMap<String, Vec<String>> {
        let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for m in self.sources.iter().chain(&self.transforms) {
            for p in &m.produces {
                out.entry(p.clone()).or_default().push(m.name.clone());
            }
        }
        for b in &self.source_proxies {
            out.entry(b.local_alias.clone()).or_default().push(b.name.clone());
        }
        out
    }

    pub fn module_names(&self) -> impl Iterator<Item = &str> {
        self.sources
            .iter()
            .map(|m| m.name.as_str())
            .chain(self.source_proxies.iter().map(|b| b.name.as_str()))
            .chain(self.transforms.iter().map(|m| m.name.as_str()))
            .chain(self.publishers.iter().map(|m| m.name.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Defaults {
    /// Unset means 10 s simulated or 30 s wall clock, depending on mode.
    pub source_period: Option<Duration>,
    pub boot_timeout: Duration,
    pub stop_grace: Duration,
}

impl Default for Defaults {
    fn default() -> Self {
        Defaults { source_period: None, boot_timeout: Duration::from_secs(120), stop_grace: Duration::from_secs(30) }
    }
}

impl Defaults {
    pub fn source_period(&self, mode: RunMode) -> Duration {
        self.source_period.unwrap_or(match mode {
            RunMode::Simulated => Duration::from_secs(10),
            RunMode::Live => Duration::from_secs(30),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub channels: Vec<ChannelConfig>,
    pub archive_dir: PathBuf,
    pub metrics_dir: PathBuf,
    pub control_socket: PathBuf,
    pub defaults: Defaults,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            channels: Vec::new(),
            archive_dir: PathBuf::from("archive"),
            metrics_dir: PathBuf::from("metrics"),
            control_socket: PathBuf::from("decision-engine.sock"),
            defaults: Defaults::default(),
        }
    }
}

impl EngineConfig {
    pub fn channel(&self, id: &str) -> Option<&ChannelConfig> {
        self.channels.iter().find(|c| c.channel_id == id)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("channel `{channel}`, {item}: parse error at {line}:{column}: {message}")]
    Expression { channel: String, item: String, line: usize, column: usize, message: String },
    #[error("invalid configuration:\n{}", issues.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n"))]
    Invalid { issues: Vec<ConfigIssue> },
}

// ---- raw file schema -------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEngine {
    archive_dir: Option<PathBuf>,
    metrics_dir: Option<PathBuf>,
    control_socket: Option<PathBuf>,
    #[serde(default)]
    defaults: RawDefaults,
    #[serde(default)]
    channels: Vec<RawChannel>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawDefaults {
    source_period: Option<f64>,
    boot_timeout: Option<f64>,
    stop_grace: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChannel {
    id: String,
    #[serde(default)]
    sources: Vec<RawModule>,
    #[serde(default)]
    source_proxies: Vec<RawProxy>,
    #[serde(default)]
    transforms: Vec<RawModule>,
    #[serde(default)]
    facts: Vec<RawFact>,
    #[serde(default)]
    rules: Vec<RawRule>,
    #[serde(default)]
    publishers: Vec<RawModule>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModule {
    name: String,
    plugin: String,
    #[serde(default)]
    consumes: Vec<String>,
    #[serde(default)]
    produces: Vec<String>,
    period: Option<f64>,
    #[serde(default)]
    parameters: Option<Value>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProxy {
    name: String,
    channel: String,
    product: String,
    alias: String,
    max_staleness: f64,
    period: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFact {
    name: String,
    expr: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    name: String,
    condition: String,
    #[serde(default)]
    actions: Vec<String>,
    #[serde(default)]
    derives: Vec<String>,
}

fn seconds(v: f64, what: &str) -> Result<Duration, ConfigError> {
    Duration::try_from_secs_f64(v).map_err(|_| ConfigError::Syntax(format!("{what}: {v} is not a valid duration")))
}

fn module(raw: RawModule, kind: ModuleKind, channel: &str) -> Result<ModuleSpec, ConfigError> {
    let what = format!("channel `{channel}`, {kind} `{}`", raw.name);
    if kind == ModuleKind::Source && !raw.consumes.is_empty() {
        return Err(ConfigError::Syntax(format!("{what}: sources cannot consume products")));
    }
    if kind == ModuleKind::Publisher && !raw.produces.is_empty() {
        return Err(ConfigError::Syntax(format!("{what}: publishers cannot declare products")));
    }
    if kind != ModuleKind::Source && raw.period.is_some() {
        return Err(ConfigError::Syntax(format!("{what}: only sources have a period")));
    }
    Ok(ModuleSpec {
        kind,
        period: raw.period.map(|p| seconds(p, &what)).transpose()?,
        name: raw.name,
        plugin: raw.plugin,
        parameters: raw.parameters.unwrap_or_else(|| Value::Object(Default::default())),
        consumes: raw.consumes,
        produces: raw.produces,
    })
}

fn expression(text: &str, channel: &str, item: String) -> Result<logic::Expr, ConfigError> {
    parse_expression(text).map_err(|e| {
        let (line, column) = e.position();
        ConfigError::Expression { channel: channel.to_string(), item, line, column, message: e.to_string() }
    })
}

/// Parse configuration text. Expressions are parsed; structure is not
/// validated beyond unique channel ids.
pub fn parse_config(text: &str) -> Result<EngineConfig, ConfigError> {
    let raw: RawEngine = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    let mut cfg = EngineConfig::default();
    if let Some(d) = raw.archive_dir {
        cfg.archive_dir = d;
    }
    if let Some(d) = raw.metrics_dir {
        cfg.metrics_dir = d;
    }
    if let Some(d) = raw.control_socket {
        cfg.control_socket = d;
    }
    if let Some(p) = raw.defaults.source_period {
        cfg.defaults.source_period = Some(seconds(p, "defaults.source_period")?);
    }
    if let Some(p) = raw.defaults.boot_timeout {
        cfg.defaults.boot_timeout = seconds(p, "defaults.boot_timeout")?;
    }
    if let Some(p) = raw.defaults.stop_grace {
        cfg.defaults.stop_grace = seconds(p, "defaults.stop_grace")?;
    }
    for rc in raw.channels {
        let id = rc.id;
        let mut ch = ChannelConfig::new(&id);
        for m in rc.sources {
            ch.sources.push(module(m, ModuleKind::Source, &id)?);
        }
        for p in rc.source_proxies {
            let what = format!("channel `{id}`, source proxy `{}`", p.name);
            ch.source_proxies.push(SourceProxyBinding {
                max_staleness: seconds(p.max_staleness, &what)?,
                period: p.period.map(|v| seconds(v, &what)).transpose()?,
                name: p.name,
                source_channel: p.channel,
                product_name: p.product,
                local_alias: p.alias,
            });
        }
        for m in rc.transforms {
            ch.transforms.push(module(m, ModuleKind::Transform, &id)?);
        }
        for m in rc.publishers {
            ch.publishers.push(module(m, ModuleKind::Publisher, &id)?);
        }
        for f in rc.facts {
            let expr = expression(&f.expr, &id, format!("fact `{}`", f.name))?;
            ch.facts.push(Fact::new(f.name, expr));
        }
        for r in rc.rules {
            let condition = expression(&r.condition, &id, format!("rule `{}`", r.name))?;
            ch.rules.push(Rule { name: r.name, condition, actions: r.actions, derived_facts: r.derives });
        }
        cfg.channels.push(ch);
    }
    let dups = duplicate_channels(&cfg);
    if !dups.is_empty() {
        return Err(ConfigError::Invalid { issues: dups });
    }
    Ok(cfg)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<EngineConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Io { path: path.to_path_buf(), message: e.to_string() })?;
    parse_config(&text)
}

// ---- validation -------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Problem {
    DuplicateChannel,
    Composition(String),
    DuplicateModule(String),
    ReservedName(String),
    UnproducedProduct(String),
    ProducesOverlap { product: String, producers: Vec<String> },
    TransformCycle(Vec<String>),
    Logic(logic::ValidationError),
    UnknownPublisher(String),
    Plugin(String),
    BadProxy(String),
    BadPeriod,
    UndeclaredKind(String),
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Problem::DuplicateChannel => f.write_str("duplicate channel id"),
            Problem::Composition(m) => write!(f, "incomplete channel: {m}"),
            Problem::DuplicateModule(n) => write!(f, "module name `{n}` used more than once"),
            Problem::ReservedName(n) => write!(f, "product name `{n}` is reserved for the engine"),
            Problem::UnproducedProduct(n) => write!(f, "unproduced product {n}"),
            Problem::ProducesOverlap { product, producers } => {
                write!(f, "product {product} produced by more than one module ({})", producers.join(", "))
            }
            Problem::TransformCycle(path) => write!(f, "transform dependency cycle: {}", path.join(" -> ")),
            Problem::Logic(e) => write!(f, "{e}"),
            Problem::UnknownPublisher(n) => write!(f, "rule action names unknown publisher `{n}`"),
            Problem::Plugin(m) => f.write_str(m),
            Problem::BadProxy(m) => f.write_str(m),
            Problem::BadPeriod => f.write_str("period must be positive"),
            Problem::UndeclaredKind(m) => f.write_str(m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub channel: String,
    pub location: String,
    pub problem: Problem,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}: {}", self.channel, self.location, self.problem)
    }
}

/// Configuration that passed [`validate_config`], with each channel's
/// evaluation plan and transform order.
#[derive(Debug, Clone)]
pub struct ValidatedConfig {
    pub config: EngineConfig,
    pub plans: BTreeMap<String, DependencyPlan>,
    pub transform_orders: BTreeMap<String, Vec<String>>,
}

fn duplicate_channels(cfg: &EngineConfig) -> Vec<ConfigIssue> {
    let mut seen = BTreeMap::<&str, usize>::new();
    for c in &cfg.channels {
        *seen.entry(&c.channel_id).or_default() += 1;
    }
    seen.into_iter()
        .filter(|(_, n)| *n > 1)
        .map(|(id, _)| ConfigIssue {
            channel: id.to_string(),
            location: "channel".into(),
            problem: Problem::DuplicateChannel,
        })
        .collect()
}

fn is_reserved(name: &str) -> bool {
    name == INFERENCE_RESULT || name == CYCLE_ERROR || name.starts_with("fact:")
}

/// Order transforms so every producer runs before its consumers.
pub fn transform_order(transforms: &[ModuleSpec]) -> Result<Vec<String>, Vec<String>> {
    let producer: BTreeMap<&str, &str> =
        transforms.iter().flat_map(|t| t.produces.iter().map(move |p| (p.as_str(), t.name.as_str()))).collect();
    let deps: BTreeMap<String, BTreeSet<String>> = transforms
        .iter()
        .map(|t| {
            let ds = t.consumes.iter().filter_map(|c| producer.get(c.as_str()).map(|s| s.to_string())).collect();
            (t.name.clone(), ds)
        })
        .collect();
    topo_order(&deps).map_err(|stuck| find_cycle(&deps, &stuck))
}

/// Check a configuration against itself and the plugin registry. Never
/// fails fast: every issue is returned, ordered by channel then location.
pub fn validate_config(cfg: &EngineConfig, registry: &PluginRegistry) -> Result<ValidatedConfig, Vec<ConfigIssue>> {
    let mut issues = duplicate_channels(cfg);
    let mut plans = BTreeMap::new();
    let mut orders = BTreeMap::new();
    let channel_ids: BTreeSet<&str> = cfg.channels.iter().map(|c| c.channel_id.as_str()).collect();

    for ch in &cfg.channels {
        let mut push = |location: String, problem: Problem| {
            issues.push(ConfigIssue { channel: ch.channel_id.clone(), location, problem })
        };
        let chan = "channel".to_string();

        if ch.sources.is_empty() && ch.source_proxies.is_empty() {
            push(chan.clone(), Problem::Composition("needs at least one source or source proxy".into()));
        }
        if ch.transforms.is_empty() {
            push(chan.clone(), Problem::Composition("needs at least one transform".into()));
        }
        if ch.facts.is_empty() || ch.rules.is_empty() {
            push(chan.clone(), Problem::Composition("needs at least one fact and one rule".into()));
        }
        if ch.publishers.is_empty() {
            push(chan.clone(), Problem::Composition("needs at least one publisher".into()));
        }

        let mut names = BTreeMap::<&str, usize>::new();
        for n in ch.module_names() {
            *names.entry(n).or_default() += 1;
        }
        for (n, c) in names {
            if c > 1 {
                push(format!("module `{n}`"), Problem::DuplicateModule(n.to_string()));
            }
        }

        for (section, list, kind) in [
            ("source", &ch.sources, ModuleKind::Source),
            ("transform", &ch.transforms, ModuleKind::Transform),
            ("publisher", &ch.publishers, ModuleKind::Publisher),
        ] {
            for m in list {
                let loc = format!("{section} `{}`", m.name);
                if m.kind != kind {
                    push(loc.clone(), Problem::UndeclaredKind(format!("declared as {} in the {section} list", m.kind)));
                }
                if kind == ModuleKind::Source && !m.consumes.is_empty() {
                    push(loc.clone(), Problem::UndeclaredKind("sources cannot consume products".into()));
                }
                if kind == ModuleKind::Publisher && !m.produces.is_empty() {
                    push(loc.clone(), Problem::UndeclaredKind("publishers cannot declare products".into()));
                }
                if m.period.is_some_and(|p| p.is_zero()) {
                    push(loc.clone(), Problem::BadPeriod);
                }
                if let Err(e) = registry.instantiate(m) {
                    push(loc, Problem::Plugin(e.to_string()));
                }
            }
        }

        let producers = ch.producers();
        for (product, who) in &producers {
            if is_reserved(product) {
                push(format!("product `{product}`"), Problem::ReservedName(product.clone()));
            }
            if who.len() > 1 {
                push(
                    format!("product `{product}`"),
                    Problem::ProducesOverlap { product: product.clone(), producers: who.clone() },
                );
            }
        }

        for t in &ch.transforms {
            for c in &t.consumes {
                if !producers.contains_key(c) {
                    push(format!("transform `{}`", t.name), Problem::UnproducedProduct(c.clone()));
                }
            }
        }
        for p in &ch.publishers {
            for c in &p.consumes {
                if !producers.contains_key(c) && !is_reserved(c) {
                    push(format!("publisher `{}`", p.name), Problem::UnproducedProduct(c.clone()));
                }
            }
        }
        for f in &ch.facts {
            for c in f.expr.product_refs() {
                if !producers.contains_key(&c) {
                    push(format!("fact `{}`", f.name), Problem::UnproducedProduct(c));
                }
            }
        }

        match transform_order(&ch.transforms) {
            Ok(order) => {
                orders.insert(ch.channel_id.clone(), order);
            }
            Err(path) => push("transforms".into(), Problem::TransformCycle(path)),
        }

        match logic::validate(&ch.facts, &ch.rules) {
            Ok(plan) => {
                plans.insert(ch.channel_id.clone(), plan);
            }
            Err(errs) => {
                for e in errs {
                    push("rules".into(), Problem::Logic(e));
                }
            }
        }

        let publishers: BTreeSet<&str> = ch.publishers.iter().map(|p| p.name.as_str()).collect();
        for r in &ch.rules {
            for a in &r.actions {
                if !publishers.contains(a.as_str()) {
                    push(format!("rule `{}`", r.name), Problem::UnknownPublisher(a.clone()));
                }
            }
        }

        for b in &ch.source_proxies {
            let loc = format!("source proxy `{}`", b.name);
            if b.source_channel == ch.channel_id {
                push(loc.clone(), Problem::BadProxy("a proxy cannot read from its own channel".into()));
            } else if !channel_ids.contains(b.source_channel.as_str()) {
                push(loc.clone(), Problem::BadProxy(format!("unknown channel `{}`", b.source_channel)));
            } else if let Some(target) = cfg.channel(&b.source_channel) {
                let exists = target.producers().contains_key(&b.product_name) || is_reserved(&b.product_name);
                if !exists {
                    push(
                        loc.clone(),
                        Problem::BadProxy(format!(
                            "channel `{}` does not produce `{}`",
                            b.source_channel, b.product_name
                        )),
                    );
                }
            }
            if b.period.is_some_and(|p| p.is_zero()) {
                push(loc, Problem::BadPeriod);
            }
        }
    }

    if issues.is_empty() {
        Ok(ValidatedConfig { config: cfg.clone(), plans, transform_orders: orders })
    } else {
        issues.sort_by(|a, b| {
            (a.channel.as_str(), a.location.as_str(), a.problem.to_string()).cmp(&(
                b.channel.as_str(),
                b.location.as_str(),
                b.problem.to_string(),
            ))
        });
        issues.dedup();
        Err(issues)
    }
}
