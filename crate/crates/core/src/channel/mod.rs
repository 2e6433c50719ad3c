//! Channel assembly, source loops, the decision cycle and lifecycle control.

mod engine;
mod plugin;
mod proxy;
mod runner;
mod task_manager;
mod trigger;

pub use engine::{Engine, EngineError};
pub use plugin::{
    input, param, Factory, Inputs, InvokeContext, Module, ModuleError, ModuleKind, ModuleSpec, Outputs, PluginError,
    PluginRegistry,
};
pub use proxy::{resolve_source_proxy, ProxyError};
pub use runner::{
    assemble_channel, AssemblyError, Channel, ChannelOptions, ChannelState, ChannelStats, ChannelStatus, CycleError,
    CycleOutcome, Diagnostic, FeedRun, Level, SOURCE_FAILURE_BUDGET,
};
pub use task_manager::{LifecycleError, TaskManager};
pub use trigger::{TriggerCell, TriggerEffect, TriggerState};
