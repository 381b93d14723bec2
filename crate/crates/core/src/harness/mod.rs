//! Topologies, scenarios, the simulated network, metrics and CSV export.

pub mod config;
pub mod export;
pub mod metrics;
pub mod network;
pub mod scenario;
pub mod topology;

pub use config::{RunConfig, SimParams};
pub use export::export_csv;
pub use metrics::{jain_index, BusySample, FlowMetrics, RunMetrics};
pub use network::run;
pub use scenario::{scenario, FlowSpec, ScenarioSpec, Transport};
pub use topology::{build_chain, Topology};
