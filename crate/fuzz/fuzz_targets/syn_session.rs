#![no_main]

use std::net::{IpAddr, Ipv4Addr};
use std::sync::OnceLock;

use dhps::analysis::{nstar_table, NstarTable};
use dhps::server::{PortPool, ServerConfig, ServerSession, SynObservation};
use libfuzzer_sys::fuzz_target;

const CLIENT: IpAddr = IpAddr::V4(Ipv4Addr::new(10, 0, 0, 2));
const OTHER: IpAddr = IpAddr::V4(Ipv4Addr::new(10, 0, 0, 3));

fn table() -> &'static NstarTable {
    static T: OnceLock<NstarTable> = OnceLock::new();
    T.get_or_init(|| nstar_table(256, 2e-12).expect("solvable"))
}

// Each 6-byte record: flags, destination selector, source port, arrival step.
fuzz_target!(|data: &[u8]| {
    let mut session = ServerSession::new(CLIENT, ServerConfig::default(), table().clone()).expect("valid");
    let mut pool = PortPool::new();
    let candidates = session.next_candidates(&mut pool).expect("pool has room");
    let mut arrival = 0u64;
    for c in data.chunks_exact(6) {
        let client_ip = if c[0] & 1 == 0 { CLIENT } else { OTHER };
        let dst_port = if c[0] & 2 == 0 {
            candidates[usize::from(c[1]) % candidates.len()]
        } else {
            u16::from_le_bytes([c[1], c[0]])
        };
        let src_port = u16::from_le_bytes([c[2], c[3]]);
        arrival += u64::from(u16::from_le_bytes([c[4], c[5]]));
        let _ = session.record_syn(SynObservation { client_ip, src_port, dst_port, arrival_index: arrival });
    }
    let before = pool.in_use(CLIENT);
    if let Ok(round) = session.evaluate_phase1(&mut pool) {
        let mut s = session.s_prime().to_vec();
        assert!(s.iter().all(|p| candidates.contains(p)));
        s.sort_unstable();
        s.dedup();
        assert_eq!(s.len(), session.s_prime().len());
        assert!(pool.in_use(CLIENT) <= before);
        let _ = round;
    }
    session.release_all(&mut pool);
    assert_eq!(pool.in_use(CLIENT), 0);
});
