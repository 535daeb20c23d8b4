use std::collections::{BTreeMap, HashSet};
use std::net::IpAddr;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dhps::attacker::{destination_ports, run_phase1, AttackConfig};
use dhps::kernel::{Kernel, KernelConfig, KernelKeys, NoiseMode, ThreeTuple};
use dhps::server::*;
use dhps::simnet::{organic_connects, run_scenario, Device, NetConfig, Network, Scenario, SimBed};

const RHO: u32 = 28232;

fn range() -> PortRange {
    PortRange::new(32768, 60999).unwrap()
}

fn ip(s: &str) -> IpAddr {
    s.parse().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn repeated_connects_advance_by_one_step(seed in any::<u64>(), step in 1u32..4, port in 1u16..) {
        let mut cfg = KernelConfig::new(seed);
        cfg.increment_step = step;
        let mut k = Kernel::new(cfg).unwrap();
        let t = ThreeTuple::new(ip("10.0.0.2"), ip("198.51.100.7"), port).unwrap();
        let a = k.connect_refused(t).unwrap();
        let b = k.connect_refused(t).unwrap();
        prop_assert!(range().contains(a) && range().contains(b));
        prop_assert_eq!(range().forward_gap(a, b), step);
    }

    #[test]
    fn burst_order_recovered_from_any_arrival_order(
        start in 32768u16..=60999,
        incs in proptest::collection::vec(1u32..200, 1..40),
        shuffle_seed in any::<u64>(),
    ) {
        let r = range();
        let mut ports = vec![start];
        for inc in &incs {
            let last = *ports.last().unwrap();
            let off = (u32::from(last - 32768) + inc) % RHO;
            ports.push(32768 + off as u16);
        }
        let mut seen = ports.clone();
        seen.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
        prop_assert_eq!(separate_bursts(&seen, r).unwrap(), ports.clone());
        let total: u32 = incs.iter().sum();
        prop_assert_eq!(compute_delta(&ports[ports.len() - 2..], DeltaMode::ConsecutivePair, r).unwrap(), *incs.last().unwrap());
        prop_assert_eq!(compute_delta(&ports, DeltaMode::MaxConsecutive, r).unwrap(), *incs.iter().max().unwrap());
        prop_assert_eq!(r.forward_gap(ports[0], *ports.last().unwrap()), total % RHO);
    }

    #[test]
    fn decode_tolerates_sub_beta_noise(
        alpha in 1usize..=4,
        beta in 1u32..80,
        cells in proptest::collection::vec(0usize..6, 4),
        noise in proptest::collection::vec(0u32..1000, 6),
    ) {
        let cells = &cells[..alpha];
        let universe: Vec<usize> = (0..6).collect();
        let mut d = planned_deltas(cells, beta, &universe);
        for (i, e) in d.iter_mut().enumerate() {
            e.1 += noise[i] % beta;
        }
        let want: BTreeMap<usize, usize> = cells.iter().copied().enumerate().collect();
        prop_assert_eq!(decode_segments(&d, alpha, beta).unwrap(), want);
    }

    #[test]
    fn canonical_id_ignores_order_of_later_loopbacks(
        cells in proptest::collection::vec(0usize..12, 1..60),
        shuffle_seed in any::<u64>(),
    ) {
        let entries: Vec<(usize, u16)> = cells.iter().enumerate().map(|(i, &c)| (c, 443 + i as u16)).collect();
        let mut firsts = Vec::new();
        let mut rest = Vec::new();
        let mut seen = HashSet::new();
        for &e in &entries {
            if seen.insert(e.0) { firsts.push(e) } else { rest.push(e) }
        }
        let build = |order: &[(usize, u16)]| {
            let mut b = DeviceIdBuilder::new();
            for &(c, l) in order {
                b.add(c, l);
            }
            b.build()
        };
        let mut shuffled = rest.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
        let a = build(&entries);
        let b = build(&[firsts.clone(), shuffled].concat());
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.n, entries.len() - firsts.len());
        prop_assert_eq!(a.pairs.len(), a.n);
    }

    #[test]
    fn traffic_meter_is_exact_below_saturation(seed in any::<u64>(), count in 0u64..3000) {
        let mut k = Kernel::new(KernelConfig::new(seed)).unwrap();
        let client = ip("10.0.0.2");
        let dests = one_per_cell(&k, client, ip("203.0.113.9"));
        let p: Vec<u16> = dests.iter().map(|&d| k.connect_refused(d).unwrap()).collect();
        organic_connects(&mut k, client, count, &mut ChaCha8Rng::seed_from_u64(seed));
        let q: Vec<u16> = dests.iter().map(|&d| k.connect_refused(d).unwrap()).collect();
        prop_assert_eq!(traffic_count(&p, &q, range(), 1).total, count);
    }

    #[test]
    fn pool_allocations_are_disjoint_and_release_exactly(counts in proptest::collection::vec(1usize..3000, 1..10)) {
        let mut pool = PortPool::new();
        let c = ip("192.0.2.1");
        let mut all = HashSet::new();
        let mut held = Vec::new();
        for n in counts {
            let got = pool.allocate(c, n).unwrap();
            for p in &got {
                prop_assert!(all.insert(*p));
            }
            held.push(got);
        }
        prop_assert_eq!(pool.in_use(c), all.len());
        for h in held {
            pool.release(c, &h);
        }
        prop_assert_eq!(pool.available(c), POOL_CAPACITY);
    }

    #[test]
    fn candidate_ranges_are_disjoint(t in 2usize..600, base in 1u16..2000) {
        let mut seen = HashSet::new();
        for i in 1..=8 {
            if let Some(ports) = destination_ports(i, t, base) {
                prop_assert_eq!(ports.len(), t - 1);
                for p in ports {
                    prop_assert!(seen.insert(p));
                }
            }
        }
    }
}

fn one_per_cell(k: &Kernel, client: IpAddr, server: IpAddr) -> Vec<ThreeTuple> {
    let t = k.config().table_size;
    let mut by_cell: Vec<Option<ThreeTuple>> = vec![None; t];
    for port in 1024..=u16::MAX {
        let tup = ThreeTuple::new(client, server, port).unwrap();
        let c = k.cell_of(&tup);
        by_cell[c].get_or_insert(tup);
        if by_cell.iter().all(Option::is_some) {
            break;
        }
    }
    by_cell.into_iter().map(Option::unwrap).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn phase1_never_accepts_a_shared_cell(
        seed in any::<u64>(),
        rate in 0.0f64..40.0,
        patched in any::<bool>(),
        drop in 0.0f64..0.2,
        reorder in 0usize..10,
    ) {
        let noise = if patched { NoiseMode::PatchedUniform1To8 } else { NoiseMode::Linux1In16 };
        let kernel = Kernel::new(KernelConfig::new(seed).with_noise(noise)).unwrap();
        let (client, server) = (ip("10.0.0.2"), ip("203.0.113.1"));
        let net = NetConfig { drop_prob: drop, reorder_window: reorder, duplicate_prob: 0.05, retransmit: true, ..NetConfig::default() };
        let mut bed = SimBed { device: Device::new(kernel, client, server, rate, seed), network: Network::new(net, seed) };
        let nstar = dhps::analysis::nstar_table(256, 2e-12).unwrap();
        let mut session = ServerSession::new(client, ServerConfig::default(), nstar).unwrap();
        let mut pool = PortPool::new();
        // Heavy noise may exhaust the iteration cap; what was accepted must
        // still be collision-free.
        let out = run_phase1(&mut bed, &mut session, &mut pool, &AttackConfig::default());
        let finished = matches!(out, Ok(_) | Err(ServerError::IterationLimit { .. }));
        prop_assert!(finished, "{:?}", out);
        let cells: HashSet<usize> = session
            .s_prime()
            .iter()
            .map(|&p| bed.device.kernel.cell_of(&ThreeTuple::new(client, server, p).unwrap()))
            .collect();
        prop_assert_eq!(cells.len(), session.s_prime().len());
        if out.is_ok() {
            prop_assert_eq!(cells.len(), 256);
        }
        prop_assert!(pool.in_use(client) <= 2 * 255);
    }

    #[test]
    fn equal_k2_gives_identical_ids(k1a in any::<[u8; 16]>(), k1b in any::<[u8; 16]>(), k2 in any::<[u8; 16]>(), seed in any::<u64>()) {
        let mk = |k1, s: u64| {
            let mut cfg = KernelConfig::new(s);
            cfg.keys = Some(KernelKeys { k1, k2 });
            let mut sc = Scenario::new("lemma", s, cfg);
            sc.repeats = 1;
            run_scenario(&sc).unwrap().report.runs.remove(0).device_id
        };
        let a = mk(k1a, seed);
        let b = mk(k1b, seed.wrapping_add(1));
        prop_assert!(a.is_some());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn termination_is_sound(seed in any::<u64>()) {
        let mut sc = Scenario::new("sound", seed, KernelConfig::new(seed).with_noise(NoiseMode::Linux1In16));
        sc.repeats = 1;
        let id = run_scenario(&sc).unwrap().report.runs.remove(0).device_id.unwrap();
        let p_star = dhps::analysis::pstar_for_population(1_000_000, 1.0);
        prop_assert!(dhps::analysis::pld(256, id.l, id.n) <= p_star);
    }

    #[test]
    fn scenarios_replay_identically(seed in any::<u64>(), rate in 0.0f64..20.0, drop in 0.0f64..0.1) {
        let mut sc = Scenario::new("replay", seed, KernelConfig::new(seed).with_noise(NoiseMode::Linux1In16));
        sc.organic_rate = rate;
        sc.net = NetConfig { drop_prob: drop, retransmit: true, reorder_window: 4, ..NetConfig::default() };
        let a = run_scenario(&sc).unwrap().report;
        let b = run_scenario(&sc).unwrap().report;
        prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}
