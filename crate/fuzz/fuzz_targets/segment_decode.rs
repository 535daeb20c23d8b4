#![no_main]

use std::collections::BTreeMap;

use dhps::server::{decode_segments, planned_deltas};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if data.len() < 3 {
        return;
    }
    let alpha = 1 + usize::from(data[0] % 8);
    let beta = 1 + u32::from(u16::from_le_bytes([data[1], data[2]]));
    let rest = &data[3..];

    // Arbitrary differences must never panic, and a decode maps every loopback.
    let mut deltas: BTreeMap<u8, u32> = BTreeMap::new();
    for c in rest.chunks_exact(5) {
        deltas.insert(c[0], u32::from_le_bytes([c[1], c[2], c[3], c[4]]));
    }
    let deltas: Vec<(u8, u32)> = deltas.into_iter().collect();
    if let Ok(m) = decode_segments(&deltas, alpha, beta) {
        assert_eq!(m.keys().copied().collect::<Vec<_>>(), (0..alpha).collect::<Vec<_>>());
    }

    // Noise-free differences decode back to their cells.
    if rest.len() >= alpha {
        let cells: Vec<u8> = rest[..alpha].iter().map(|c| c % 32).collect();
        let universe: Vec<u8> = (0..32).collect();
        let planned = planned_deltas(&cells, beta, &universe);
        let m = decode_segments(&planned, alpha, beta).expect("planned differences decode");
        for (i, c) in cells.iter().enumerate() {
            assert_eq!(m[&i], *c);
        }
    }
});
