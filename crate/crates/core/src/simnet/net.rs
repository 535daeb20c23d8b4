//! Logical-time network between the device and the tracking server.

use std::collections::HashMap;
use std::net::IpAddr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::server::SynObservation;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewriteMode {
    #[default]
    Preserve,
    /// NAT assigns ports from one sequential counter across all flows.
    RewriteAll,
    /// NAT assigns a uniformly random port per flow.
    RewriteRandom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    #[serde(default)]
    pub drop_prob: f64,
    /// Probability that a delivered SYN is delivered again one tick later
    /// (lost reply, client retransmission).
    #[serde(default)]
    pub duplicate_prob: f64,
    /// Maximum displacement in arrival order.
    #[serde(default)]
    pub reorder_window: usize,
    #[serde(default)]
    pub rewrite_mode: RewriteMode,
    /// Maximum SYNs delivered per tick; excess is dropped.
    #[serde(default)]
    pub throttle: Option<u32>,
    /// Re-deliver a dropped SYN once, one tick later.
    #[serde(default)]
    pub retransmit: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self { drop_prob: 0.0, duplicate_prob: 0.0, reorder_window: 0, rewrite_mode: RewriteMode::Preserve, throttle: None, retransmit: false }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, p) in [("drop_prob", self.drop_prob), ("duplicate_prob", self.duplicate_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} = {p} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

/// A SYN as it leaves the device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Syn {
    pub client_ip: IpAddr,
    pub src_port: u16,
    pub dst_port: u16,
}

#[derive(Debug, Clone, Copy)]
struct InFlight {
    syn: Syn,
    retry: bool,
}

#[derive(Debug, Clone)]
pub struct Network {
    config: NetConfig,
    rng: ChaCha8Rng,
    pending: Vec<InFlight>,
    nat: HashMap<Syn, u16>,
    nat_next: u16,
    tick: u64,
    dropped: u64,
}

/// Arrival indices are `tick << TICK_SHIFT | position within the tick`, so
/// consecutive ticks are separated by a wide gap in logical time.
pub const TICK_SHIFT: u32 = 24;

impl Network {
    pub fn new(config: NetConfig, seed: u64) -> Self {
        Self {
            config,
            rng: ChaCha8Rng::seed_from_u64(seed),
            pending: Vec::new(),
            nat: HashMap::new(),
            nat_next: 1024,
            tick: 0,
            dropped: 0,
        }
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    /// SYNs lost for good so far.
    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    /// One tick: pending retransmissions go first, then `sent` in order.
    pub fn deliver_tick(&mut self, sent: &[Syn]) -> Vec<SynObservation> {
        let mut batch = std::mem::take(&mut self.pending);
        batch.extend(sent.iter().map(|&syn| InFlight { syn, retry: false }));
        self.transmit(batch)
    }

    /// Delivers everything still pending.
    pub fn flush(&mut self) -> Vec<SynObservation> {
        let mut out = Vec::new();
        while !self.pending.is_empty() {
            let batch = std::mem::take(&mut self.pending);
            out.extend(self.transmit(batch));
        }
        out
    }

    fn transmit(&mut self, batch: Vec<InFlight>) -> Vec<SynObservation> {
        self.tick += 1;
        let cfg = self.config.clone();
        let mut passed = Vec::with_capacity(batch.len());
        let mut budget = cfg.throttle.map(|t| t as usize);
        for f in batch {
            let throttled = match budget.as_mut() {
                Some(0) => true,
                Some(b) => {
                    *b -= 1;
                    false
                }
                None => false,
            };
            let lost = throttled || (cfg.drop_prob > 0.0 && self.rng.random_bool(cfg.drop_prob));
            if lost {
                if cfg.retransmit && !f.retry {
                    self.pending.push(InFlight { syn: f.syn, retry: true });
                } else {
                    self.dropped += 1;
                }
                continue;
            }
            if !f.retry && cfg.duplicate_prob > 0.0 && self.rng.random_bool(cfg.duplicate_prob) {
                self.pending.push(InFlight { syn: f.syn, retry: true });
            }
            passed.push(f.syn);
        }
        if cfg.reorder_window > 0 {
            let mut keyed: Vec<(usize, Syn)> = passed
                .into_iter()
                .enumerate()
                .map(|(i, s)| (i + self.rng.random_range(0..=cfg.reorder_window), s))
                .collect();
            keyed.sort_by_key(|(k, _)| *k);
            passed = keyed.into_iter().map(|(_, s)| s).collect();
        }
        let base = self.tick << TICK_SHIFT;
        passed
            .into_iter()
            .enumerate()
            .map(|(i, syn)| {
                let src_port = self.translate(syn);
                SynObservation { client_ip: syn.client_ip, src_port, dst_port: syn.dst_port, arrival_index: base + i as u64 }
            })
            .collect()
    }

    fn translate(&mut self, syn: Syn) -> u16 {
        match self.config.rewrite_mode {
            RewriteMode::Preserve => syn.src_port,
            RewriteMode::RewriteAll => {
                if let Some(&p) = self.nat.get(&syn) {
                    return p;
                }
                let p = self.nat_next;
                self.nat_next = if self.nat_next == u16::MAX { 1024 } else { self.nat_next + 1 };
                self.nat.insert(syn, p);
                p
            }
            RewriteMode::RewriteRandom => {
                let rng = &mut self.rng;
                *self.nat.entry(syn).or_insert_with(|| rng.random_range(1024..=u16::MAX))
            }
        }
    }
}

/// Single-shot delivery of `events` through a fresh network.
pub fn deliver(events: &[Syn], config: &NetConfig, seed: u64) -> Vec<SynObservation> {
    let mut net = Network::new(config.clone(), seed);
    let mut out = net.deliver_tick(events);
    out.extend(net.flush());
    out
}
