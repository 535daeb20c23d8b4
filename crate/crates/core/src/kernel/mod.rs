//! Model of the victim kernel's TCP source-port allocator.
//!
//! [`Kernel`] implements double-hash port selection over a perturbation
//! table of `T` counters, with the Linux deviations (noisy increments,
//! increment step) and the patched countermeasure modes. It exposes
//! introspection (`cell_of`, `counter`) for test harnesses only; the attack
//! code never calls those.

mod alg5;
pub mod prf;
mod tuple;

use std::collections::HashSet;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use alg5::{alg5_next_port, Alg5Allocator, RFC_DEFAULT_N};
pub use prf::{prf_index, prf_offset, Key};
pub use tuple::{FourTuple, ThreeTuple, TupleError, LOOPBACK_DST, LOOPBACK_SRC};

pub const DEFAULT_TABLE_SIZE: usize = 256;
pub const DEFAULT_MIN_EPHEMERAL: u16 = 32768;
pub const DEFAULT_MAX_EPHEMERAL: u16 = 60999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Every successful candidate advances its cell by exactly one step.
    #[default]
    None,
    /// A first-candidate success advances the cell twice with probability 1/16.
    #[serde(rename = "linux_1_16")]
    Linux1In16,
    /// A first-candidate success advances the cell by a uniform draw in 1..=8.
    #[serde(rename = "patched_uniform_1_8")]
    PatchedUniform1To8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelKeys {
    #[serde(with = "hex_key")]
    pub k1: Key,
    #[serde(with = "hex_key")]
    pub k2: Key,
}

mod hex_key {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(key: &[u8; 16], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(key))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 16], D::Error> {
        let text = String::deserialize(d)?;
        let bytes = hex::decode(&text).map_err(D::Error::custom)?;
        bytes
            .try_into()
            .map_err(|_| D::Error::custom("key must be 32 hex digits"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    /// Seeds the key stream and the noise stream.
    pub seed: u64,
    #[serde(default = "default_table_size")]
    pub table_size: usize,
    #[serde(default = "default_min_ephemeral")]
    pub min_ephemeral: u16,
    #[serde(default = "default_max_ephemeral")]
    pub max_ephemeral: u16,
    /// Counter advance per candidate tried (Linux uses 2).
    #[serde(default = "default_step")]
    pub increment_step: u32,
    #[serde(default)]
    pub noise_mode: NoiseMode,
    /// Re-key after this many connect calls; `None` or `Some(0)` disables.
    #[serde(default)]
    pub rekey_interval: Option<u64>,
    /// Explicit keys; drawn from the seed when absent.
    #[serde(default)]
    pub keys: Option<KernelKeys>,
}

fn default_table_size() -> usize {
    DEFAULT_TABLE_SIZE
}
fn default_min_ephemeral() -> u16 {
    DEFAULT_MIN_EPHEMERAL
}
fn default_max_ephemeral() -> u16 {
    DEFAULT_MAX_EPHEMERAL
}
fn default_step() -> u32 {
    1
}

impl KernelConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            table_size: DEFAULT_TABLE_SIZE,
            min_ephemeral: DEFAULT_MIN_EPHEMERAL,
            max_ephemeral: DEFAULT_MAX_EPHEMERAL,
            increment_step: 1,
            noise_mode: NoiseMode::None,
            rekey_interval: None,
            keys: None,
        }
    }

    pub fn with_noise(mut self, noise_mode: NoiseMode) -> Self {
        self.noise_mode = noise_mode;
        self
    }

    pub fn with_table_size(mut self, table_size: usize) -> Self {
        self.table_size = table_size;
        self
    }

    /// Size of the ephemeral range (`rho`).
    pub fn num_ephemeral(&self) -> u32 {
        u32::from(self.max_ephemeral) - u32::from(self.min_ephemeral) + 1
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        if self.table_size < 2 {
            return Err(KernelError::InvalidConfig("table_size must be at least 2".into()));
        }
        if self.min_ephemeral == 0 || self.min_ephemeral > self.max_ephemeral {
            return Err(KernelError::InvalidConfig(format!(
                "ephemeral range {}..={} is empty or includes port 0",
                self.min_ephemeral, self.max_ephemeral
            )));
        }
        if self.increment_step == 0 {
            return Err(KernelError::InvalidConfig("increment_step must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KernelError {
    #[error("no suitable source port for {0}")]
    PortExhausted(ThreeTuple),
    #[error("invalid kernel configuration: {0}")]
    InvalidConfig(String),
}

/// Seedable DHPS allocator state.
#[derive(Debug, Clone)]
pub struct Kernel {
    config: KernelConfig,
    keys: KernelKeys,
    table: Vec<u64>,
    in_use: HashSet<FourTuple>,
    key_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    connect_count: u64,
    since_rekey: u64,
    rekeys: u64,
}

impl Kernel {
    pub fn new(config: KernelConfig) -> Result<Self, KernelError> {
        config.validate()?;
        let mut key_rng = ChaCha8Rng::seed_from_u64(config.seed);
        key_rng.set_stream(0);
        let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed);
        noise_rng.set_stream(1);
        let keys = match config.keys {
            Some(keys) => keys,
            None => draw_keys(&mut key_rng),
        };
        Ok(Self {
            table: vec![0; config.table_size],
            config,
            keys,
            in_use: HashSet::new(),
            key_rng,
            noise_rng,
            connect_count: 0,
            since_rekey: 0,
            rekeys: 0,
        })
    }

    pub fn config(&self) -> &KernelConfig {
        &self.config
    }

    pub fn num_ephemeral(&self) -> u32 {
        self.config.num_ephemeral()
    }

    pub fn connect_count(&self) -> u64 {
        self.connect_count
    }

    pub fn rekey_count(&self) -> u64 {
        self.rekeys
    }

    /// Double-hash port selection; on success the 4-tuple is held in use.
    pub fn connect(&mut self, tuple: ThreeTuple) -> Result<u16, KernelError> {
        let port = self.select_ephemeral_port(tuple)?;
        self.connect_count += 1;
        self.since_rekey += 1;
        if let Some(interval) = self.config.rekey_interval {
            if interval > 0 && self.since_rekey >= interval {
                self.rekey();
            }
        }
        Ok(port)
    }

    /// A connection attempt answered by RST: the port is allocated and the
    /// socket is discarded immediately.
    pub fn connect_refused(&mut self, tuple: ThreeTuple) -> Result<u16, KernelError> {
        let port = self.connect(tuple)?;
        self.in_use.remove(&tuple.with_src_port(port));
        Ok(port)
    }

    pub fn release(&mut self, four: &FourTuple) -> bool {
        self.in_use.remove(four)
    }

    fn select_ephemeral_port(&mut self, tuple: ThreeTuple) -> Result<u16, KernelError> {
        let num = u64::from(self.num_ephemeral());
        let step = u64::from(self.config.increment_step);
        let offset = u64::from(prf_offset(&self.keys.k1, &tuple));
        let index = prf_index(&self.keys.k2, &tuple, self.config.table_size);
        for attempt in 0..num {
            let candidate = (offset + self.table[index]) % num;
            let port = self.config.min_ephemeral + candidate as u16;
            self.table[index] += step;
            if self.check_suitable_port(&tuple, port) {
                if attempt == 0 {
                    self.table[index] += step * self.draw_noise();
                }
                self.in_use.insert(tuple.with_src_port(port));
                return Ok(port);
            }
        }
        Err(KernelError::PortExhausted(tuple))
    }

    /// Extra increments (in steps) applied after a first-candidate success.
    fn draw_noise(&mut self) -> u64 {
        match self.config.noise_mode {
            NoiseMode::None => 0,
            NoiseMode::Linux1In16 => u64::from(self.noise_rng.random_ratio(1, 16)),
            NoiseMode::PatchedUniform1To8 => self.noise_rng.random_range(1..=8u64) - 1,
        }
    }

    /// False iff the 4-tuple `(tuple, port)` is currently in use.
    pub fn check_suitable_port(&self, tuple: &ThreeTuple, port: u16) -> bool {
        !self.in_use.contains(&tuple.with_src_port(port))
    }

    /// Draws fresh K1/K2 from the seeded key stream. Counters are kept.
    pub fn rekey(&mut self) {
        self.keys = draw_keys(&mut self.key_rng);
        self.in_use.clear();
        self.since_rekey = 0;
        self.rekeys += 1;
    }

    // Harness-only introspection below.

    pub fn keys(&self) -> &KernelKeys {
        &self.keys
    }

    pub fn cell_of(&self, tuple: &ThreeTuple) -> usize {
        prf_index(&self.keys.k2, tuple, self.config.table_size)
    }

    pub fn counter(&self, cell: usize) -> u64 {
        self.table[cell]
    }

    pub fn table(&self) -> &[u64] {
        &self.table
    }

    pub fn in_use_len(&self) -> usize {
        self.in_use.len()
    }

    /// Advances a cell directly, bypassing port selection (adversarial noise
    /// injection in tests).
    pub fn inject_increments(&mut self, cell: usize, count: u64) {
        self.table[cell] += count * u64::from(self.config.increment_step);
    }
}

fn draw_keys(rng: &mut ChaCha8Rng) -> KernelKeys {
    let mut k1 = [0u8; 16];
    let mut k2 = [0u8; 16];
    rng.fill_bytes(&mut k1);
    rng.fill_bytes(&mut k2);
    KernelKeys { k1, k2 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::{IpAddr, Ipv4Addr};

    fn ext(port: u16) -> ThreeTuple {
        ThreeTuple::new(
            IpAddr::V4(Ipv4Addr::new(10, 0, 0, 2)),
            IpAddr::V4(Ipv4Addr::new(198, 51, 100, 1)),
            port,
        )
        .unwrap()
    }

    fn rebase(port: u16, min: u16, num: u32) -> u32 {
        (u32::from(port) - u32::from(min)) % num
    }

    #[test]
    fn consecutive_calls_advance_by_one() {
        let mut k = Kernel::new(KernelConfig::new(1)).unwrap();
        let t = ext(443);
        let a = k.connect_refused(t).unwrap();
        let b = k.connect_refused(t).unwrap();
        let num = k.num_ephemeral();
        assert_eq!(rebase(b, 32768, num), (rebase(a, 32768, num) + 1) % num);
    }

    #[test]
    fn ports_stay_in_default_range() {
        let mut k = Kernel::new(KernelConfig::new(2)).unwrap();
        for p in 1..5000 {
            let port = k.connect_refused(ext(p)).unwrap();
            assert!((32768..=60999).contains(&port));
        }
    }

    #[test]
    fn suitability_tracks_in_use_set() {
        let mut k = Kernel::new(KernelConfig::new(3)).unwrap();
        let t = ext(80);
        assert!(k.check_suitable_port(&t, 40000));
        let p = k.connect(t).unwrap();
        assert!(!k.check_suitable_port(&t, p));
        assert!(k.release(&t.with_src_port(p)));
        assert!(k.check_suitable_port(&t, p));
    }

    #[test]
    fn skips_ports_in_use() {
        // Hold the candidate the allocator would pick next and check it moves on.
        let mut cfg = KernelConfig::new(4);
        cfg.min_ephemeral = 1000;
        cfg.max_ephemeral = 1003;
        let mut k = Kernel::new(cfg).unwrap();
        let t = ext(80);
        let mut seen = HashSet::new();
        for _ in 0..4 {
            assert!(seen.insert(k.connect(t).unwrap()));
        }
        assert_eq!(k.connect(t), Err(KernelError::PortExhausted(t)));
        // Every candidate tried advanced the counter.
        let cell = k.cell_of(&t);
        assert_eq!(k.counter(cell), 4 + 4);
    }

    #[test]
    fn rekey_interval_zero_never_rekeys() {
        let mut cfg = KernelConfig::new(5);
        cfg.rekey_interval = Some(0);
        let mut k = Kernel::new(cfg).unwrap();
        let keys = *k.keys();
        for p in 1..1000 {
            k.connect_refused(ext(p)).unwrap();
        }
        assert_eq!(*k.keys(), keys);
        assert_eq!(k.rekey_count(), 0);
    }

    #[test]
    fn rekey_interval_triggers() {
        let mut cfg = KernelConfig::new(6);
        cfg.rekey_interval = Some(10);
        let mut k = Kernel::new(cfg).unwrap();
        let keys = *k.keys();
        for p in 1..=25 {
            k.connect_refused(ext(p)).unwrap();
        }
        assert_eq!(k.rekey_count(), 2);
        assert_ne!(*k.keys(), keys);
    }

    #[test]
    fn rekey_keeps_counters() {
        let mut k = Kernel::new(KernelConfig::new(7)).unwrap();
        for p in 1..100 {
            k.connect_refused(ext(p)).unwrap();
        }
        let before = k.table().to_vec();
        k.rekey();
        assert_eq!(k.table(), &before[..]);
    }

    #[test]
    fn increment_step_two() {
        let mut cfg = KernelConfig::new(8);
        cfg.increment_step = 2;
        let mut k = Kernel::new(cfg).unwrap();
        let t = ext(443);
        let a = k.connect_refused(t).unwrap();
        let b = k.connect_refused(t).unwrap();
        assert_eq!(rebase(b, 32768, 28232), (rebase(a, 32768, 28232) + 2) % 28232);
    }

    #[test]
    fn explicit_keys_are_used() {
        let mut cfg = KernelConfig::new(9);
        cfg.keys = Some(KernelKeys { k1: [1; 16], k2: [2; 16] });
        let k = Kernel::new(cfg).unwrap();
        assert_eq!(k.keys().k2, [2; 16]);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = KernelConfig::new(0);
        cfg.table_size = 1;
        assert!(Kernel::new(cfg).is_err());
        let mut cfg = KernelConfig::new(0);
        cfg.min_ephemeral = 5000;
        cfg.max_ephemeral = 4000;
        assert!(Kernel::new(cfg).is_err());
    }

    #[test]
    fn config_json_defaults() {
        let cfg: KernelConfig = serde_json::from_str(r#"{"seed": 11, "noise_mode": "linux_1_16"}"#).unwrap();
        assert_eq!(cfg.table_size, 256);
        assert_eq!(cfg.num_ephemeral(), 28232);
        assert_eq!(cfg.noise_mode, NoiseMode::Linux1In16);
        assert!(serde_json::from_str::<KernelConfig>(r#"{"table_size": 256}"#).is_err());
    }
}
