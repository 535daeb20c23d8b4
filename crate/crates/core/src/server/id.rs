//! Canonical device identifiers.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Independent loopback collision pairs plus the loopback count at
/// termination. Pairs are `(first loopback in the cell, later loopback)`,
/// identified by loopback destination port, and kept sorted.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DeviceId {
    pub pairs: Vec<(u16, u16)>,
    pub l: usize,
    pub n: usize,
}

impl DeviceId {
    pub fn new(mut pairs: Vec<(u16, u16)>, l: usize) -> Self {
        pairs.sort_unstable();
        let n = pairs.len();
        Self { pairs, l, n }
    }

    /// Canonical text form, `l=<l>;a-b,c-d,...`.
    pub fn canonical(&self) -> String {
        let mut s = format!("l={};", self.l);
        for (i, (a, b)) in self.pairs.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            let _ = write!(s, "{a}-{b}");
        }
        s
    }

    /// Hex SHA-256 of [`DeviceId::canonical`].
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}

/// Accumulates loopback-to-cell assignments in enumeration order.
#[derive(Debug, Clone)]
pub struct DeviceIdBuilder<K> {
    first_in_cell: HashMap<K, u16>,
    pairs: Vec<(u16, u16)>,
    l: usize,
}

impl<K: Hash + Eq + Copy> Default for DeviceIdBuilder<K> {
    fn default() -> Self {
        Self { first_in_cell: HashMap::new(), pairs: Vec::new(), l: 0 }
    }
}

impl<K: Hash + Eq + Copy> DeviceIdBuilder<K> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records the next loopback; returns `true` when it collides with an
    /// earlier one.
    pub fn add(&mut self, cell: K, loopback: u16) -> bool {
        self.l += 1;
        match self.first_in_cell.get(&cell) {
            Some(&first) => {
                self.pairs.push((first, loopback));
                true
            }
            None => {
                self.first_in_cell.insert(cell, loopback);
                false
            }
        }
    }

    pub fn n(&self) -> usize {
        self.pairs.len()
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn first_in_cell(&self, cell: &K) -> Option<u16> {
        self.first_in_cell.get(cell).copied()
    }

    pub fn build(&self) -> DeviceId {
        DeviceId::new(self.pairs.clone(), self.l)
    }
}
