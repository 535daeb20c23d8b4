use dhps::analysis::*;

const T: usize = 256;

// (N exponent, p*, l_min, l_max, E(l), c/c*) as printed.
const POPULATION_ROWS: [(u32, f64, usize, usize, f64, f64); 11] = [
    (2, 2.020e-4, 3, 64, 30.027, 0.16872),
    (3, 2.002e-6, 4, 78, 35.151, 0.37544),
    (4, 2.000e-8, 5, 90, 39.261, 0.35504),
    (5, 2.000e-10, 6, 100, 44.899, 0.19315),
    (6, 2.000e-12, 6, 109, 49.496, 0.24641),
    (7, 2.000e-14, 7, 117, 53.010, 0.33046),
    (8, 2.000e-16, 8, 124, 56.600, 0.28510),
    (9, 2.000e-18, 9, 131, 60.354, 0.26165),
    (10, 2.000e-20, 10, 137, 63.843, 0.25072),
    (11, 2.000e-22, 11, 143, 66.891, 0.27247),
    (12, 2.000e-24, 11, 149, 69.917, 0.26590),
];

#[test]
fn population_rows_match_printed_values() {
    for (exp, p_star, l_min, l_max, e_l, c) in POPULATION_ROWS {
        let row = population_row(T, 10u64.pow(exp), 1.0).unwrap();
        let p_rounded: f64 = format!("{:.3e}", row.p_star).parse().unwrap();
        assert_eq!(p_rounded, p_star, "N=1e{exp}");
        assert_eq!(row.l_min, l_min, "N=1e{exp}");
        assert_eq!(row.l_max, l_max, "N=1e{exp}");
        assert!((row.expected_l - e_l).abs() <= 1e-3, "N=1e{exp}: E(l)={}", row.expected_l);
        assert!((row.c_over_cstar - c).abs() <= 1e-4, "N=1e{exp}: c/c*={}", row.c_over_cstar);
    }
}

#[test]
fn nstar_bands_for_a_million() {
    let tab = nstar_table(T, pstar_for_population(1_000_000, 1.0)).unwrap();
    assert_eq!(
        tab.bands(),
        vec![(6, 52, 5), (53, 72, 4), (73, 87, 3), (88, 98, 2), (99, 108, 1), (109, 109, 0)]
    );
    assert_eq!(tab.l_max, 109);
    assert_eq!(tab.l_min, 6);
}

#[test]
fn l_min_closed_form() {
    for exp in 2..=12 {
        let p = pstar_for_population(10u64.pow(exp), 1.0);
        let tab = nstar_table(T, p).unwrap();
        let closed = (1.0 - p.ln() / (T as f64).ln()).ceil() as usize;
        assert_eq!(tab.l_min, closed);
        assert!(tab.nstar.iter().flatten().all(|&n| n <= n_upper_bound(T, p)));
    }
}

#[test]
fn small_population_table_bounds() {
    let tab = nstar_table(T, pstar_for_population(100, 1.0)).unwrap();
    assert_eq!((tab.l_min, tab.l_max), (3, 64));
}

#[test]
fn phase1_expectation() {
    let d = phase1_stop_distribution(T).unwrap();
    assert!((d.expected - 13.819116).abs() < 1e-6, "E(l)={}", d.expected);
    let mode = (1..60).max_by(|&a, &b| d.prob(a).partial_cmp(&d.prob(b)).unwrap()).unwrap();
    assert!((12..=14).contains(&mode), "mode {mode}");
    // Rises to the mode, then decays.
    for l in 5..mode {
        assert!(d.prob(l) < d.prob(l + 1));
    }
    for l in mode..37 {
        assert!(d.prob(l) > d.prob(l + 1));
    }
}

#[test]
fn pstar_printed_values() {
    assert_eq!(format!("{:.3e}", pstar_for_population(1000, 1.0)), "2.002e-6");
    assert_eq!(format!("{:.3e}", pstar_for_population(1_000_000_000, 1.0)), "2.000e-18");
    let exact = 2.0 / (1e12 * (1e12 - 1.0));
    assert!((pstar_for_population(1_000_000_000_000, 1.0) / exact - 1.0).abs() < 1e-12);
}

#[test]
fn low_table_threshold() {
    let p = pstar_for_population(1_000_000_000_000, 1.0);
    assert_eq!(low_t_check(T, p).min_table_size, 86);
    assert!(low_t_check(T, pstar_for_population(1_000_000, 1.0)).adequate);
    assert!(!low_t_check(2, pstar_for_population(1_000_000, 1.0)).adequate);
    assert_eq!(low_t_special_case(pstar_for_population(1_000_000, 1.0)), 40);
}

#[test]
fn random_increment_bounds() {
    let linux = alg5_bound(30.0, 11.4, 28232.0);
    assert_eq!(linux.n_max, 81);
    assert_eq!(format!("{:.1}", linux.range_bits), "14.8");
    assert_eq!(format!("{:.1}", linux.n_bits), "6.3");
    let windows = alg5_bound(120.0, 11.4, 28232.0);
    assert_eq!(windows.n_max, 19);
    assert_eq!(format!("{:.1}", windows.n_bits), "4.2");
    // Reductions are quoted as differences of the one-decimal figures.
    let rounded = |x: f64| (x * 10.0).round() / 10.0;
    assert_eq!(format!("{:.1}", rounded(windows.range_bits) - rounded(windows.n_bits)), "10.6");
    assert_eq!(format!("{:.1}", rounded(linux.range_bits) - rounded(linux.n_bits)), "8.5");
}

#[test]
fn occupancy_exact_pair_at_256() {
    for l in [64usize, 255] {
        let closed = occupancy_pmf(T, l);
        let mut dp = OccupancyDp::new(T, 0).unwrap();
        dp.advance_to(l);
        let m = dp.marginal(0);
        for k in 0..=T {
            assert!((closed[k] - m[k]).abs() < 1e-9, "l={l} k={k}");
        }
    }
}

#[test]
fn unique_count_marginal_is_phase1_input() {
    let (unique, _) = phase1_transition(T).unwrap();
    let direct = mu_r_pmf(T, T - 1, 1).unwrap();
    assert_eq!(unique, direct[1]);
    let total: f64 = unique.iter().sum();
    assert!((total - 1.0).abs() < 1e-12);
}
