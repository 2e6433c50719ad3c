//! A simulated hybrid facility and the driver that runs the engine against it.

mod adapters;
mod driver;
mod facility;
mod scenario;

pub use adapters::{sim_endpoints, SharedSim, SimAdapter};
pub use driver::{run_scenario, sim_registry, RunOptions, RunReport, SimError};
pub use facility::{FacilitySim, JobCounts, Ledger, SimEvents};
pub use scenario::{JobWave, ProviderSpec, ScenarioError, SimScenario};
