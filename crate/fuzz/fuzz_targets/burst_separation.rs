#![no_main]

use dhps::server::{compute_delta, separate_bursts, DeltaMode, PortRange};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if data.len() < 4 {
        return;
    }
    let a = u16::from_le_bytes([data[0], data[1]]);
    let b = u16::from_le_bytes([data[2], data[3]]);
    let Ok(range) = PortRange::new(a.min(b), a.max(b)) else { return };
    let ports: Vec<u16> = data[4..]
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .filter(|&p| range.contains(p))
        .collect();
    let Ok(order) = separate_bursts(&ports, range) else { return };
    let mut x = order.clone();
    let mut y = ports.clone();
    x.sort_unstable();
    y.sort_unstable();
    assert_eq!(x, y, "output is a permutation of the input");
    for mode in [DeltaMode::ConsecutivePair, DeltaMode::MaxConsecutive] {
        if let Ok(d) = compute_delta(&order, mode, range) {
            assert!(d < range.size());
        }
    }
});
