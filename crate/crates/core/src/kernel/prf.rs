//! Keyed pseudorandom functions `F` (port offset) and `G` (table index).
//!
//! Both are SipHash-2-4 under independent 128-bit keys, with a one-byte
//! domain tag so the two outputs stay unrelated even under equal keys.

use std::hash::Hasher;
use std::net::IpAddr;

use siphasher::sip::SipHasher24;

use super::ThreeTuple;

/// A 128-bit secret.
pub type Key = [u8; 16];

const DOMAIN_OFFSET: u8 = 0x46;
const DOMAIN_INDEX: u8 = 0x47;

fn keyed_hash(key: &Key, domain: u8, tuple: &ThreeTuple) -> u64 {
    let mut h = SipHasher24::new_with_key(key);
    h.write_u8(domain);
    write_addr(&mut h, tuple.src_ip());
    write_addr(&mut h, tuple.dst_ip());
    h.write(&tuple.dst_port().to_be_bytes());
    h.finish()
}

fn write_addr(h: &mut SipHasher24, addr: IpAddr) {
    match addr {
        IpAddr::V4(a) => {
            h.write_u8(4);
            h.write(&a.octets());
        }
        IpAddr::V6(a) => {
            h.write_u8(6);
            h.write(&a.octets());
        }
    }
}

/// `G_K2`: maps a tuple to a perturbation-table cell in `[0, table_size)`.
pub fn prf_index(key_k2: &Key, tuple: &ThreeTuple, table_size: usize) -> usize {
    debug_assert!(table_size > 0);
    (keyed_hash(key_k2, DOMAIN_INDEX, tuple) % table_size as u64) as usize
}

/// `F_K1`: maps a tuple to a 32-bit port offset.
pub fn prf_offset(key_k1: &Key, tuple: &ThreeTuple) -> u32 {
    (keyed_hash(key_k1, DOMAIN_OFFSET, tuple) >> 32) as u32
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::Ipv4Addr;

    fn tuple(port: u16) -> ThreeTuple {
        ThreeTuple::new(
            IpAddr::V4(Ipv4Addr::new(10, 0, 0, 2)),
            IpAddr::V4(Ipv4Addr::new(203, 0, 113, 7)),
            port,
        )
        .unwrap()
    }

    #[test]
    fn deterministic() {
        let k = [7u8; 16];
        let t = tuple(1234);
        assert_eq!(prf_index(&k, &t, 256), prf_index(&k, &t, 256));
        assert_eq!(prf_offset(&k, &t), prf_offset(&k, &t));
    }

    #[test]
    fn index_in_range_for_odd_table() {
        let k = [1u8; 16];
        for p in 1..2000 {
            assert!(prf_index(&k, &tuple(p), 257) < 257);
        }
    }

    #[test]
    fn domains_are_separated() {
        // Same key for both functions must not yield correlated outputs.
        let k = [3u8; 16];
        let same = (1..=1000)
            .filter(|&p| prf_offset(&k, &tuple(p)) % 256 == prf_index(&k, &tuple(p), 256) as u32)
            .count();
        assert!(same < 20, "{same} coincidences out of 1000");
    }
}
