use std::fmt;
use std::net::{IpAddr, Ipv4Addr};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Source address used by the device for loopback connections.
pub const LOOPBACK_SRC: IpAddr = IpAddr::V4(Ipv4Addr::new(127, 0, 0, 1));
/// Fixed loopback destination probed during loopback mapping.
pub const LOOPBACK_DST: IpAddr = IpAddr::V4(Ipv4Addr::new(127, 1, 2, 3));

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TupleError {
    #[error("destination port must be in 1..=65535")]
    ZeroPort,
    #[error("source {src} and destination {dst} belong to different address families")]
    MixedFamily { src: IpAddr, dst: IpAddr },
}

/// The hash input of the port allocator: (source IP, destination IP,
/// destination port).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawTuple")]
pub struct ThreeTuple {
    src_ip: IpAddr,
    dst_ip: IpAddr,
    dst_port: u16,
}

#[derive(Deserialize)]
struct RawTuple {
    src_ip: IpAddr,
    dst_ip: IpAddr,
    dst_port: u16,
}

impl TryFrom<RawTuple> for ThreeTuple {
    type Error = TupleError;

    fn try_from(raw: RawTuple) -> Result<Self, Self::Error> {
        ThreeTuple::new(raw.src_ip, raw.dst_ip, raw.dst_port)
    }
}

impl ThreeTuple {
    pub fn new(src_ip: IpAddr, dst_ip: IpAddr, dst_port: u16) -> Result<Self, TupleError> {
        if dst_port == 0 {
            return Err(TupleError::ZeroPort);
        }
        if src_ip.is_ipv4() != dst_ip.is_ipv4() {
            return Err(TupleError::MixedFamily { src: src_ip, dst: dst_ip });
        }
        Ok(Self { src_ip, dst_ip, dst_port })
    }

    /// Loopback tuple `127.0.0.1 -> 127.1.2.3:port`.
    pub fn loopback(dst_port: u16) -> Result<Self, TupleError> {
        Self::new(LOOPBACK_SRC, LOOPBACK_DST, dst_port)
    }

    pub fn src_ip(&self) -> IpAddr {
        self.src_ip
    }

    pub fn dst_ip(&self) -> IpAddr {
        self.dst_ip
    }

    pub fn dst_port(&self) -> u16 {
        self.dst_port
    }

    pub fn is_loopback(&self) -> bool {
        self.dst_ip.is_loopback()
    }

    /// Completes the tuple into a TCP 4-tuple.
    pub fn with_src_port(self, src_port: u16) -> FourTuple {
        FourTuple { tuple: self, src_port }
    }
}

impl fmt::Display for ThreeTuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.dst_ip {
            IpAddr::V4(dst) => write!(f, "{} -> {}:{}", self.src_ip, dst, self.dst_port),
            IpAddr::V6(dst) => write!(f, "{} -> [{}]:{}", self.src_ip, dst, self.dst_port),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FourTuple {
    pub tuple: ThreeTuple,
    pub src_port: u16,
}
