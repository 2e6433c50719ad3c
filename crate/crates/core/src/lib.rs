//! A channel-based decision engine.
//!
//! Decision channels gather data through sources, refine it with transforms,
//! decide with a forward-chaining logic engine and act through publishers.
//! All state lives in a versioned [`dataspace`]; every decision cycle is
//! archived. The [`stdlib`] and [`sim`] modules provide a resource-provisioning
//! policy and a simulated hybrid cloud / HPC / grid facility to run it
//! against.

pub mod channel;
pub mod clock;
pub mod config;
pub mod dataspace;
mod graph;
pub mod logic;
pub mod sim;
pub mod stdlib;

pub use channel::{Channel, ChannelState, CycleOutcome, Engine, PluginRegistry, TaskManager};
pub use clock::{Clock, ManualClock, SystemClock, Timestamp};
pub use config::{load_config, validate_config, ChannelConfig, EngineConfig, ValidatedConfig};
pub use dataspace::{DataBlockView, DataProduct, DataSpace, GenerationId, SpaceHandle};
pub use logic::{DependencyPlan, InferenceResult};
pub use sim::{run_scenario, RunReport, SimScenario};
