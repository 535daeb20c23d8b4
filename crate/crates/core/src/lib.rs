//! Simulator and analysis toolkit for RFC 6056 double-hash port selection
//! and the collision-based device tracking attack against it.

pub mod analysis;
pub mod attacker;
pub mod kernel;
pub mod server;
pub mod simnet;
