//! Recovering send order from observed source ports, and port differences.

use serde::{Deserialize, Serialize};

use super::ServerError;

/// Ephemeral range as seen by the server.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortRange {
    pub min: u16,
    pub max: u16,
}

impl PortRange {
    pub const LINUX_DEFAULT: PortRange = PortRange { min: 32768, max: 60999 };

    pub fn new(min: u16, max: u16) -> Result<Self, ServerError> {
        if min == 0 || min > max {
            return Err(ServerError::InvalidRange { min, max });
        }
        Ok(Self { min, max })
    }

    /// `rho`, the number of ephemeral ports.
    pub fn size(&self) -> u32 {
        u32::from(self.max) - u32::from(self.min) + 1
    }

    pub fn contains(&self, port: u16) -> bool {
        (self.min..=self.max).contains(&port)
    }

    /// Counter advance from `from` to `to`, modulo the range size.
    pub fn forward_gap(&self, from: u16, to: u16) -> u32 {
        let rho = self.size();
        let a = u32::from(from).wrapping_sub(u32::from(self.min)) % rho;
        let b = u32::from(to).wrapping_sub(u32::from(self.min)) % rho;
        (b + rho - a) % rho
    }
}

impl Default for PortRange {
    fn default() -> Self {
        Self::LINUX_DEFAULT
    }
}

/// Orders the source ports observed for one destination by send time:
/// ascending, rotated past the single gap wider than half the range.
pub fn separate_bursts(ports: &[u16], range: PortRange) -> Result<Vec<u16>, ServerError> {
    if let Some(&bad) = ports.iter().find(|&&p| !range.contains(p)) {
        return Err(ServerError::PortOutOfRange(bad));
    }
    let mut sorted = ports.to_vec();
    sorted.sort_unstable();
    if sorted.len() < 2 {
        return Ok(sorted);
    }
    let rho = range.size();
    let half = rho / 2;
    let wide: Vec<usize> = sorted
        .windows(2)
        .enumerate()
        .filter(|(_, w)| u32::from(w[1] - w[0]) > half)
        .map(|(i, _)| i + 1)
        .collect();
    let span = u32::from(sorted[sorted.len() - 1] - sorted[0]);
    match wide.as_slice() {
        [] if rho - span > half => Ok(sorted),
        [cut] => {
            sorted.rotate_left(*cut);
            Ok(sorted)
        }
        _ => Err(ServerError::AmbiguousOrder { observed: ports.len(), wide_gaps: wide.len() }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DeltaMode {
    /// Last port minus the one before it.
    #[default]
    ConsecutivePair,
    /// Largest advance between consecutive measurements.
    MaxConsecutive,
}

/// Difference between ordered measurements, modulo the range size.
pub fn compute_delta(ordered: &[u16], mode: DeltaMode, range: PortRange) -> Result<u32, ServerError> {
    if ordered.len() < 2 {
        return Err(ServerError::InsufficientData { observed: ordered.len() });
    }
    Ok(match mode {
        DeltaMode::ConsecutivePair => {
            let n = ordered.len();
            range.forward_gap(ordered[n - 2], ordered[n - 1])
        }
        DeltaMode::MaxConsecutive => ordered
            .windows(2)
            .map(|w| range.forward_gap(w[0], w[1]))
            .max()
            .expect("at least one pair"),
    })
}
