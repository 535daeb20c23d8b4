//! Tracking-server logic: observation intake, burst separation, difference
//! decoding and device-ID assembly.

mod burst;
mod decode;
mod id;
mod pool;
mod session;
mod traffic;

use std::net::IpAddr;

use thiserror::Error;

pub use burst::{compute_delta, separate_bursts, DeltaMode, PortRange};
pub use decode::{decode_segments, planned_deltas};
pub use id::{DeviceId, DeviceIdBuilder};
pub use pool::{PortPool, POOL_CAPACITY, POOL_FIRST_PORT};
pub use session::{
    burst_matrix, GroupAction, GroupRecord, Phase1Record, Phase1Round, Phase2Step, ServerConfig, ServerSession,
    SynObservation, Transcript,
};
pub use traffic::{traffic_count, TrafficCount};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ServerError {
    #[error("port range {min}..={max} is empty or includes port 0")]
    InvalidRange { min: u16, max: u16 },
    #[error("source port {0} lies outside the ephemeral range")]
    PortOutOfRange(u16),
    #[error("cannot order {observed} measurements ({wide_gaps} wide gaps)")]
    AmbiguousOrder { observed: usize, wide_gaps: usize },
    #[error("need at least two measurements, got {observed}")]
    InsufficientData { observed: usize },
    #[error("loopback {loopback} claimed by two destinations")]
    DecodeConflict { loopback: usize },
    #[error("no destination carries the highest loopback")]
    MissingHigh,
    #[error("{count} destinations exceed the set-aside threshold")]
    MultipleHigh { count: usize },
    #[error("no session destination {port} for client {client}")]
    UnknownDestination { client: IpAddr, port: u16 },
    #[error("pool for {client} cannot supply {requested} ports ({available} left)")]
    PoolExhausted { client: IpAddr, requested: usize, available: usize },
    #[error("port {port} is not available to {client}")]
    PortUnavailable { client: IpAddr, port: u16 },
    #[error("unique-cell discovery exceeded {cap} iterations")]
    IterationLimit { cap: usize },
    #[error("no convergence: {reason}")]
    NoConvergence { reason: String },
    #[error("invalid server configuration: {0}")]
    InvalidConfig(String),
    #[error("out of order: {0}")]
    WrongStage(&'static str),
}
