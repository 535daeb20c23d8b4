//! Destination-port pool shared by clients behind one source address.

use std::collections::{BTreeSet, HashMap};
use std::net::IpAddr;

use super::ServerError;

/// Lowest port handed out; everything below is treated as blocked.
pub const POOL_FIRST_PORT: u16 = 81;
/// Usable destination ports per client address.
pub const POOL_CAPACITY: usize = (u16::MAX - POOL_FIRST_PORT + 1) as usize;

#[derive(Debug, Clone, Default)]
pub struct PortPool {
    live: HashMap<IpAddr, BTreeSet<u16>>,
}

impl PortPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn in_use(&self, client: IpAddr) -> usize {
        self.live.get(&client).map_or(0, BTreeSet::len)
    }

    pub fn available(&self, client: IpAddr) -> usize {
        POOL_CAPACITY - self.in_use(client)
    }

    pub fn is_allocated(&self, client: IpAddr, port: u16) -> bool {
        self.live.get(&client).is_some_and(|s| s.contains(&port))
    }

    /// Lowest `count` free ports.
    pub fn allocate(&mut self, client: IpAddr, count: usize) -> Result<Vec<u16>, ServerError> {
        let available = self.available(client);
        if count > available {
            return Err(ServerError::PoolExhausted { client, requested: count, available });
        }
        let used = self.live.entry(client).or_default();
        let mut out = Vec::with_capacity(count);
        for port in POOL_FIRST_PORT..=u16::MAX {
            if out.len() == count {
                break;
            }
            if !used.contains(&port) {
                out.push(port);
            }
        }
        used.extend(out.iter().copied());
        Ok(out)
    }

    /// Claims exactly `ports`, all or nothing.
    pub fn claim(&mut self, client: IpAddr, ports: &[u16]) -> Result<(), ServerError> {
        let used = self.live.entry(client).or_default();
        if let Some(&p) = ports.iter().find(|&&p| p < POOL_FIRST_PORT || used.contains(&p)) {
            return Err(ServerError::PortUnavailable { client, port: p });
        }
        used.extend(ports.iter().copied());
        Ok(())
    }

    pub fn release(&mut self, client: IpAddr, ports: &[u16]) {
        if let Some(used) = self.live.get_mut(&client) {
            for p in ports {
                used.remove(p);
            }
            if used.is_empty() {
                self.live.remove(&client);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::Ipv4Addr;

    const C: IpAddr = IpAddr::V4(Ipv4Addr::new(203, 0, 113, 7));

    #[test]
    fn capacity_constant() {
        assert_eq!(POOL_CAPACITY, 65455);
    }

    #[test]
    fn allocate_release_roundtrip() {
        let mut pool = PortPool::new();
        let ports = pool.allocate(C, 510).unwrap();
        assert_eq!(pool.available(C), POOL_CAPACITY - 510);
        pool.release(C, &ports);
        assert_eq!(pool.available(C), POOL_CAPACITY);
    }

    #[test]
    fn claims_conflict() {
        let mut pool = PortPool::new();
        pool.claim(C, &[1024, 1025]).unwrap();
        assert!(pool.claim(C, &[1025, 1026]).is_err());
        assert!(!pool.is_allocated(C, 1026));
        assert!(pool.claim(C, &[80]).is_err());
    }
}
