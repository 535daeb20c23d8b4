//! Counting a device's outbound connections from two counter snapshots.

use serde::Serialize;

use super::burst::PortRange;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TrafficCount {
    pub total: u64,
    pub per_cell: Vec<u32>,
}

/// Connections made between two polls of the same `T` attacker tuples. The
/// second poll itself advances each counter once and is not counted.
pub fn traffic_count(before: &[u16], after: &[u16], range: PortRange, step: u32) -> TrafficCount {
    assert_eq!(before.len(), after.len(), "snapshots must cover the same tuples");
    assert!(step >= 1, "step must be positive");
    let rho = range.size();
    let per_cell: Vec<u32> = before
        .iter()
        .zip(after)
        .map(|(&p, &q)| {
            let gap = range.forward_gap(p, q);
            ((gap + rho - step) % rho) / step
        })
        .collect();
    TrafficCount { total: per_cell.iter().map(|&c| u64::from(c)).sum(), per_cell }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poll_only_counts_zero() {
        let before = [40000u16, 50000, 60999];
        let after = [40001u16, 50001, 32768];
        assert_eq!(traffic_count(&before, &after, PortRange::default(), 1).total, 0);
    }

    #[test]
    fn single_cell_advance() {
        let c = traffic_count(&[40000], &[40005], PortRange::default(), 1);
        assert_eq!(c.per_cell, vec![4]);
    }

    #[test]
    fn doubled_step() {
        let c = traffic_count(&[40000, 41000], &[40002, 41010], PortRange::default(), 2);
        assert_eq!(c.per_cell, vec![0, 4]);
    }
}
