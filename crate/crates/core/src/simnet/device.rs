//! Simulated client device: a kernel, its addresses and background traffic.

use std::net::{IpAddr, Ipv4Addr};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::net::{Network, Syn};
use crate::attacker::{Action, Testbed};
use crate::kernel::{Kernel, ThreeTuple};
use crate::server::SynObservation;

/// Destination for a background connection: a random public IPv4 address.
fn random_external<R: Rng + ?Sized>(src: IpAddr, rng: &mut R) -> ThreeTuple {
    let dst = loop {
        let a = Ipv4Addr::from(rng.random::<u32>());
        if !(a.is_loopback() || a.is_unspecified() || a.is_private() || a.is_multicast()) {
            break a;
        }
    };
    let port = if rng.random_bool(0.8) { 443 } else { rng.random_range(1..=u16::MAX) };
    let src = match src {
        IpAddr::V4(_) => src,
        IpAddr::V6(_) => IpAddr::V4(Ipv4Addr::new(10, 0, 0, 1)),
    };
    ThreeTuple::new(src, IpAddr::V4(dst), port).expect("v4 pair, nonzero port")
}

/// Issues `count` completed background connections from `src`.
pub fn organic_connects<R: Rng + ?Sized>(kernel: &mut Kernel, src: IpAddr, count: u64, rng: &mut R) {
    for _ in 0..count {
        let t = random_external(src, rng);
        if let Ok(port) = kernel.connect(t) {
            kernel.release(&t.with_src_port(port));
        }
    }
}

/// Draws the per-tick connection count for a fractional rate.
pub fn organic_count<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> u64 {
    let whole = rate.floor();
    whole as u64 + u64::from(rng.random_bool((rate - whole).clamp(0.0, 1.0)))
}

/// Background traffic at `rate` connections per tick for `ticks` ticks.
pub fn organic_traffic<R: Rng + ?Sized>(kernel: &mut Kernel, src: IpAddr, rate: f64, ticks: u64, rng: &mut R) -> u64 {
    let mut total = 0;
    for _ in 0..ticks {
        let n = organic_count(rate, rng);
        organic_connects(kernel, src, n, rng);
        total += n;
    }
    total
}

#[derive(Debug, Clone)]
pub struct Device {
    pub kernel: Kernel,
    pub client_ip: IpAddr,
    pub server_ip: IpAddr,
    pub organic_rate: f64,
    /// Re-key the kernel every this many ticks.
    pub rekey_every_ticks: Option<u64>,
    rng: ChaCha8Rng,
    ticks: u64,
    organic: u64,
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Server(u16),
    Loopback(u16),
    Organic,
}

impl Device {
    pub fn new(kernel: Kernel, client_ip: IpAddr, server_ip: IpAddr, organic_rate: f64, seed: u64) -> Self {
        Self {
            kernel,
            client_ip,
            server_ip,
            organic_rate,
            rekey_every_ticks: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
            ticks: 0,
            organic: 0,
        }
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    pub fn organic_total(&self) -> u64 {
        self.organic
    }

    /// Executes one tick; background connects land at random positions.
    pub fn run_tick(&mut self, round: &[Action]) -> Vec<Syn> {
        if let Some(every) = self.rekey_every_ticks.filter(|&e| e > 0) {
            if self.ticks > 0 && self.ticks % every == 0 {
                self.kernel.rekey();
            }
        }
        self.ticks += 1;
        let mut ops: Vec<Op> = Vec::new();
        for a in round {
            match *a {
                Action::Syn(p) => ops.push(Op::Server(p)),
                Action::Loopback { port, count } => ops.extend((0..count).map(|_| Op::Loopback(port))),
            }
        }
        let extra = organic_count(self.organic_rate, &mut self.rng);
        for _ in 0..extra {
            let at = self.rng.random_range(0..=ops.len());
            ops.insert(at, Op::Organic);
        }
        self.organic += extra;
        let mut out = Vec::new();
        for op in ops {
            match op {
                Op::Server(dst) => {
                    let Ok(t) = ThreeTuple::new(self.client_ip, self.server_ip, dst) else { continue };
                    if let Ok(src_port) = self.kernel.connect_refused(t) {
                        out.push(Syn { client_ip: self.client_ip, src_port, dst_port: dst });
                    }
                }
                Op::Loopback(port) => {
                    let t = ThreeTuple::loopback(port).expect("nonzero loopback port");
                    let _ = self.kernel.connect_refused(t);
                }
                Op::Organic => organic_connects(&mut self.kernel, self.client_ip, 1, &mut self.rng),
            }
        }
        out
    }
}

/// A device behind a network, as seen by the attacker.
#[derive(Debug, Clone)]
pub struct SimBed {
    pub device: Device,
    pub network: Network,
}

impl Testbed for SimBed {
    fn run_round(&mut self, round: &[Action]) -> Vec<SynObservation> {
        let sent = self.device.run_tick(round);
        self.network.deliver_tick(&sent)
    }

    fn flush(&mut self) -> Vec<SynObservation> {
        self.network.flush()
    }

    fn rounds(&self) -> u64 {
        self.device.ticks()
    }
}
