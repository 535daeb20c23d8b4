use std::net::IpAddr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use dhps::analysis::{phase1_stop_distribution, pstar_for_population, nstar_table, NstarTable};
use dhps::attacker::{run_phase1, AttackConfig};
use dhps::kernel::{prf_index, Kernel, KernelConfig, NoiseMode, ThreeTuple};
use dhps::server::{PortPool, ServerConfig, ServerSession};
use dhps::simnet::montecarlo::{phase1_trials, simulated_device_id};
use dhps::simnet::{organic_traffic, run_scenario, Device, NetConfig, Network, Scenario, SimBed};

fn ip(s: &str) -> IpAddr {
    s.parse().unwrap()
}

fn chi_square_p(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let e = total as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    1.0 - ChiSquared::new((counts.len() - 1) as f64).unwrap().cdf(stat)
}

fn phase1_on_kernel(t: usize, seed: u64, nstar: &NstarTable) -> usize {
    let k = Kernel::new(KernelConfig::new(seed).with_table_size(t)).unwrap();
    let (c, s) = (ip("10.0.0.2"), ip("203.0.113.1"));
    let mut bed = SimBed { device: Device::new(k, c, s, 0.0, seed), network: Network::new(NetConfig::default(), seed) };
    let mut session = ServerSession::new(c, ServerConfig::default(), nstar.clone()).unwrap();
    run_phase1(&mut bed, &mut session, &mut PortPool::new(), &AttackConfig::default()).unwrap().iterations
}

#[test]
fn phase1_on_real_kernels_matches_exact_mean() {
    let exact = phase1_stop_distribution(256).unwrap();
    let nstar = nstar_table(256, pstar_for_population(1_000_000, 1.0)).unwrap();
    let runs = 2000u64;
    let total: usize = (0..runs).into_par_iter().map(|s| phase1_on_kernel(256, s, &nstar)).sum();
    let mean = total as f64 / runs as f64;
    let se = exact.std_dev() / (runs as f64).sqrt();
    assert!((mean - exact.expected).abs() <= 3.0 * se, "mean {mean}, exact {}, se {se}", exact.expected);
}

#[test]
fn two_cell_table_needs_at_least_two_iterations() {
    let nstar = NstarTable { table_size: 2, p_star: 0.5, l_min: 1, l_max: 1, nstar: vec![None, Some(0)] };
    let runs = 2000;
    let ls: Vec<usize> = (0..runs).map(|s| phase1_on_kernel(2, s, &nstar)).collect();
    assert!(ls.iter().all(|&l| l >= 2));
    let twos = ls.iter().filter(|&&l| l == 2).count() as f64 / runs as f64;
    assert!((twos - 0.5).abs() < 0.035, "{twos}");
    let mean = ls.iter().sum::<usize>() as f64 / runs as f64;
    assert!((mean - 3.0).abs() < 0.1, "{mean}");
}

#[test]
fn abstract_phase1_matches_exact_distribution() {
    let exact = phase1_stop_distribution(256).unwrap();
    let h = phase1_trials(256, 100_000, 77);
    let se = exact.std_dev() / (h.trials() as f64).sqrt();
    assert!((h.mean() - exact.expected).abs() <= 3.0 * se);
    assert!((h.variance().sqrt() - exact.std_dev()).abs() < 0.05);
}

#[test]
fn prf_index_is_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let key: [u8; 16] = rng.random();
    let mut counts = vec![0u64; 256];
    for _ in 0..100_000 {
        let t = ThreeTuple::new(ip("10.0.0.2"), IpAddr::from(rng.random::<[u8; 4]>()), rng.random_range(1..=u16::MAX)).unwrap();
        counts[prf_index(&key, &t, 256)] += 1;
    }
    assert!(chi_square_p(&counts) > 1e-3);
}

#[test]
fn background_traffic_spreads_uniformly() {
    let mut k = Kernel::new(KernelConfig::new(4)).unwrap();
    let before = k.table().to_vec();
    let n = organic_traffic(&mut k, ip("10.0.0.2"), 1000.0, 100, &mut ChaCha8Rng::seed_from_u64(4));
    assert_eq!(n, 100_000);
    let hits: Vec<u64> = k.table().iter().zip(&before).map(|(a, b)| a - b).collect();
    assert_eq!(hits.iter().sum::<u64>(), 100_000);
    assert!(chi_square_p(&hits) > 1e-3);
}

#[test]
fn rekeyed_kernel_yields_a_new_id() {
    let nstar = nstar_table(256, pstar_for_population(1_000_000, 1.0)).unwrap();
    let mut k = Kernel::new(KernelConfig::new(9)).unwrap();
    let mut prev = simulated_device_id(&k.keys().k2, &nstar);
    let mut same = 0;
    for _ in 0..1000 {
        k.rekey();
        let id = simulated_device_id(&k.keys().k2, &nstar);
        same += usize::from(id == prev);
        prev = id;
    }
    assert!(same <= 1, "{same}");
}

#[test]
fn lossy_reordering_network_keeps_the_ideal_id() {
    let agree: usize = (1..=100u64)
        .into_par_iter()
        .map(|seed| {
            let mut ideal = Scenario::new("ideal", seed, KernelConfig::new(seed).with_noise(NoiseMode::Linux1In16));
            ideal.repeats = 1;
            let mut lossy = ideal.clone();
            lossy.net = NetConfig { drop_prob: 0.1, reorder_window: 8, duplicate_prob: 0.05, retransmit: true, ..NetConfig::default() };
            let a = run_scenario(&ideal).unwrap().report.runs.remove(0).device_id;
            let b = run_scenario(&lossy).unwrap().report.runs.remove(0).device_id;
            usize::from(a.is_some() && a == b)
        })
        .sum();
    assert!(agree >= 99, "{agree}/100");
}

#[test]
fn throttled_network_is_countered_by_smaller_bursts() {
    let mut s = Scenario::new("throttle", 5, KernelConfig::new(5));
    s.repeats = 1;
    s.net = NetConfig { throttle: Some(200), ..NetConfig::default() };
    let full = run_scenario(&s).unwrap().report;
    assert!(full.runs[0].device_id.is_none() || full.runs[0].reruns > 0);
    s.attack.burst_capacity = 128;
    let split = run_scenario(&s).unwrap().report;
    assert!(split.runs[0].device_id.is_some(), "{:?}", split.runs[0].failure);
}
