use dhps::kernel::{KernelConfig, NoiseMode};
use dhps::simnet::{run_scenario, NetConfig, RewriteMode, Scenario};

fn scenario(seed: u64) -> Scenario {
    Scenario::new(format!("s{seed}"), seed, KernelConfig::new(seed).with_noise(NoiseMode::Linux1In16))
}

#[test]
fn ideal_network_is_consistent() {
    let out = run_scenario(&scenario(1)).unwrap();
    let r = &out.report;
    assert!(r.consistent, "{r:#?}");
    assert_eq!(r.runs[0].groups_sent, 64);
}

#[test]
fn lossy_busy_network_is_consistent() {
    let mut s = scenario(2);
    s.organic_rate = 11.4;
    s.net = NetConfig { drop_prob: 0.01, retransmit: true, ..NetConfig::default() };
    let out = run_scenario(&s).unwrap();
    assert!(out.report.consistent, "{:#?}", out.report);
}

#[test]
fn distinct_kernels_differ() {
    let a = run_scenario(&scenario(3)).unwrap().report;
    let b = run_scenario(&scenario(4)).unwrap().report;
    assert_ne!(a.runs[0].device_id, b.runs[0].device_id);
}

#[test]
fn rewriting_network_fails() {
    for mode in [RewriteMode::RewriteAll, RewriteMode::RewriteRandom] {
        let mut s = scenario(5);
        s.net.rewrite_mode = mode;
        let r = run_scenario(&s).unwrap().report;
        assert!(!r.consistent);
        assert!(r.runs.iter().all(|x| x.device_id.is_none() && x.no_convergence), "{r:#?}");
    }
}
