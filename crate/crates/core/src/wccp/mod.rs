//! Wireless congestion control: congestion header, per-node forwarder shim
//! and the rate-controlled endpoints.

pub mod endpoint;
pub mod forwarder;
pub mod header;

pub use endpoint::{update_rate, Emission, ReceiverState, SenderConfig, SenderState};
pub use forwarder::{
    compute_available_bandwidth, compute_delta_s, ChannelStats, Direction, ForwarderParams,
    ForwarderState,
};
pub use header::{echo_feedback, overwrite_feedback, CongestionHeader, HEADER_BYTES};
