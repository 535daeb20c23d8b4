//! Seeded Monte Carlo estimators. Trials run in fixed chunks, each with its
//! own ChaCha stream, so results do not depend on the thread count.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{nstar_table, pstar_for_population, AnalysisError, NstarTable};
use crate::kernel::{prf_index, ThreeTuple};
use crate::server::{DeviceId, DeviceIdBuilder};
use crate::attacker::loopback_port;

pub const CHUNK: u64 = 10_000;

/// Runs `trials` trials in chunks of [`CHUNK`]; `f(rng, n)` handles one chunk.
pub fn chunked<T, F>(trials: u64, seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng, u64) -> T + Sync,
{
    let chunks = trials.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c);
            let n = CHUNK.min(trials - c * CHUNK);
            f(&mut rng, n)
        })
        .collect()
}

/// Counts of an integer-valued outcome.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn add(&mut self, value: usize) {
        if self.counts.len() <= value {
            self.counts.resize(value + 1, 0);
        }
        self.counts[value] += 1;
    }

    pub fn merge(mut self, other: &Histogram) -> Self {
        if self.counts.len() < other.counts.len() {
            self.counts.resize(other.counts.len(), 0);
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self
    }

    pub fn trials(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        let n = self.trials() as f64;
        self.counts.iter().enumerate().map(|(v, &c)| v as f64 * c as f64).sum::<f64>() / n
    }

    /// Sample variance.
    pub fn variance(&self) -> f64 {
        let n = self.trials() as f64;
        if n < 2.0 {
            return 0.0;
        }
        let m = self.mean();
        self.counts.iter().enumerate().map(|(v, &c)| c as f64 * (v as f64 - m).powi(2)).sum::<f64>() / (n - 1.0)
    }

    pub fn frequency(&self, value: usize) -> f64 {
        self.counts.get(value).copied().unwrap_or(0) as f64 / self.trials() as f64
    }
}

/// One run of the idealized unique-cell discovery: each iteration throws
/// `T - 1` candidates; a candidate counts when its cell is not yet covered and
/// no other candidate shares it.
pub fn phase1_iterations<R: Rng + ?Sized>(t: usize, rng: &mut R, scratch: &mut Vec<u8>, covered: &mut Vec<bool>) -> usize {
    covered.clear();
    covered.resize(t, false);
    let mut left = t;
    let mut l = 0;
    let mut picks = vec![0usize; t - 1];
    while left > 0 {
        l += 1;
        scratch.clear();
        scratch.resize(t, 0);
        for p in picks.iter_mut() {
            *p = rng.random_range(0..t);
            scratch[*p] = scratch[*p].saturating_add(1);
        }
        for &p in &picks {
            if scratch[p] == 1 && !covered[p] {
                covered[p] = true;
                left -= 1;
            }
        }
    }
    l
}

pub fn phase1_trials(t: usize, trials: u64, seed: u64) -> Histogram {
    assert!(t >= 2, "table size must be at least 2");
    chunked(trials, seed, |rng, n| {
        let mut h = Histogram::default();
        let (mut scratch, mut covered) = (Vec::new(), Vec::new());
        for _ in 0..n {
            h.add(phase1_iterations(t, rng, &mut scratch, &mut covered));
        }
        h
    })
    .iter()
    .fold(Histogram::default(), |a, b| a.merge(b))
}

/// Distribution of the number of empty bins after `l` balls in `t` bins.
pub fn occupancy_trials(t: usize, l: usize, trials: u64, seed: u64) -> Histogram {
    chunked(trials, seed, |rng, n| {
        let mut h = Histogram::default();
        let mut bins = vec![false; t];
        for _ in 0..n {
            bins.iter_mut().for_each(|b| *b = false);
            let mut filled = 0;
            for _ in 0..l {
                let b = rng.random_range(0..t);
                if !bins[b] {
                    bins[b] = true;
                    filled += 1;
                }
            }
            h.add(t - filled);
        }
        h
    })
    .iter()
    .fold(Histogram::default(), |a, b| a.merge(b))
}

/// Device ID a kernel with secret `k2` would yield under `nstar`.
pub fn simulated_device_id(k2: &[u8; 16], nstar: &NstarTable) -> DeviceId {
    let mut b = DeviceIdBuilder::new();
    for i in 0.. {
        let port = loopback_port(i);
        let t = ThreeTuple::loopback(port).expect("nonzero port");
        b.add(prf_index(k2, &t, nstar.table_size), port);
        if nstar.should_terminate(b.n(), b.l()) {
            break;
        }
    }
    b.build()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSim {
    pub table_size: usize,
    pub population: u64,
    pub populations: u64,
    pub p_star: f64,
    pub c_star: f64,
    pub mean_l: f64,
    /// Standard error of `mean_l`.
    pub se_l: f64,
    pub mean_collisions: f64,
    pub se_collisions: f64,
    pub c_over_cstar: f64,
    pub l_histogram: Histogram,
}

/// Draws `populations` sets of `population` devices with independent keys and
/// counts equal device-ID pairs within each set.
pub fn phase2_populations(
    t: usize,
    population: u64,
    c_star: f64,
    populations: u64,
    seed: u64,
) -> Result<PopulationSim, AnalysisError> {
    let p_star = pstar_for_population(population, c_star);
    let nstar = nstar_table(t, p_star)?;
    let per_pop: Vec<(Histogram, u64)> = (0..populations)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(p);
            let mut h = Histogram::default();
            let mut seen: HashMap<DeviceId, u64> = HashMap::new();
            for _ in 0..population {
                let k2: [u8; 16] = rng.random();
                let id = simulated_device_id(&k2, &nstar);
                h.add(id.l);
                *seen.entry(id).or_default() += 1;
            }
            let pairs = seen.values().map(|&c| c * (c - 1) / 2).sum();
            (h, pairs)
        })
        .collect();
    let l_histogram = per_pop.iter().fold(Histogram::default(), |a, (h, _)| a.merge(h));
    let devices = l_histogram.trials() as f64;
    let cs: Vec<f64> = per_pop.iter().map(|(_, c)| *c as f64).collect();
    let k = cs.len() as f64;
    let mean_c = cs.iter().sum::<f64>() / k;
    let var_c = if k > 1.0 { cs.iter().map(|c| (c - mean_c).powi(2)).sum::<f64>() / (k - 1.0) } else { 0.0 };
    Ok(PopulationSim {
        table_size: t,
        population,
        populations,
        p_star,
        c_star,
        mean_l: l_histogram.mean(),
        se_l: (l_histogram.variance() / devices).sqrt(),
        mean_collisions: mean_c,
        se_collisions: (var_c / k).sqrt(),
        c_over_cstar: mean_c / c_star,
        l_histogram,
    })
}
