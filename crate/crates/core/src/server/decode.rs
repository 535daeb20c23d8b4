//! Segment decoding of grouped loopback probes.

use std::collections::BTreeMap;

use super::ServerError;

/// Maps loopback index `i < alpha` to the attacker tuple that shares its cell.
///
/// `deltas` are normalized counter differences between the snapshots that
/// bracket the group. The unique tuple at or above `2^(alpha-1) beta + 1` is
/// set aside and receives every loopback not claimed by another tuple's
/// segment index.
pub fn decode_segments<K: Copy + Ord>(
    deltas: &[(K, u32)],
    alpha: usize,
    beta: u32,
) -> Result<BTreeMap<usize, K>, ServerError> {
    assert!((1..=16).contains(&alpha), "alpha out of range");
    assert!(beta >= 1, "beta must be positive");
    let high = (1u32 << (alpha - 1))
        .checked_mul(beta)
        .and_then(|h| h.checked_add(1))
        .ok_or_else(|| ServerError::InvalidConfig(format!("beta {beta} too large for alpha {alpha}")))?;
    let highs: Vec<K> = deltas.iter().filter(|(_, d)| *d >= high).map(|(k, _)| *k).collect();
    if highs.len() > 1 {
        return Err(ServerError::MultipleHigh { count: highs.len() });
    }
    let mut mapping = BTreeMap::new();
    for &(key, delta) in deltas {
        if delta >= high || delta == 0 {
            continue;
        }
        let segment = (delta - 1) / beta;
        for bit in 0..alpha {
            if segment & (1 << bit) != 0 && mapping.insert(bit, key).is_some() {
                return Err(ServerError::DecodeConflict { loopback: bit });
            }
        }
    }
    for bit in 0..alpha {
        if mapping.contains_key(&bit) {
            continue;
        }
        match highs.first() {
            Some(&w) => {
                mapping.insert(bit, w);
            }
            None => return Err(ServerError::MissingHigh),
        }
    }
    Ok(mapping)
}

/// Noise-free differences produced by a group whose loopback `i` lands on
/// `cells[i]`; every tuple also gets the single burst increment.
pub fn planned_deltas<K: Copy + Ord>(cells: &[K], beta: u32, universe: &[K]) -> Vec<(K, u32)> {
    universe
        .iter()
        .map(|&k| {
            let extra: u32 = cells
                .iter()
                .enumerate()
                .filter(|(_, &c)| c == k)
                .map(|(i, _)| beta << i)
                .sum();
            (k, extra + 1)
        })
        .collect()
}
