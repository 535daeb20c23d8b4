//! Logical-time simulation: device, network, scenarios and Monte Carlo
//! estimators.

mod countermeasure;
mod device;
pub mod montecarlo;
mod net;
mod scenario;

pub use countermeasure::{compare_countermeasures, Countermeasure, CountermeasureSummary};
pub use device::{organic_connects, organic_count, organic_traffic, Device, SimBed};
pub use net::{deliver, NetConfig, Network, RewriteMode, Syn, TICK_SHIFT};
pub use scenario::{run_addresses, run_scenario, RunReport, Scenario, ScenarioError, ScenarioOutcome, ScenarioReport};
