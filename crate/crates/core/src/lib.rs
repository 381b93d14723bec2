//! Deterministic discrete-event simulator for multihop 802.11 chains,
//! comparing a busyness-driven, explicit-feedback rate controller against
//! TCP Reno.
//!
//! Layers, bottom up: [`sim`] (event engine), [`phy`] (shared medium),
//! [`mac`] (DCF and busyness measurement), [`wccp`] and [`tcp`]
//! (transports), and [`harness`] (topologies, scenarios, metrics, CSV).

pub mod error;
pub mod harness;
pub mod mac;
pub mod phy;
pub mod rtt;
pub mod sim;
pub mod tcp;
pub mod wccp;

pub use error::SimError;
pub use harness::{
    build_chain, export_csv, jain_index, run, scenario, FlowMetrics, FlowSpec, RunConfig,
    RunMetrics, ScenarioSpec, SimParams, Transport,
};
