//! Small-table adequacy and the random-increments bound.

use serde::Serialize;

use super::termination::{l_star, ln_pld};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LowTCheck {
    pub table_size: usize,
    /// `T - (1 + ln(T)/2) sqrt(T) - ln(T)/4`.
    pub lhs: f64,
    /// `-ln p*`.
    pub rhs: f64,
    pub adequate: bool,
    /// Smallest table size meeting the approximate inequality.
    pub min_table_size: usize,
    /// Whether `P^{l*}(0) <= p*` holds exactly.
    pub exact_adequate: bool,
}

fn low_t_lhs(t: usize) -> f64 {
    let tf = t as f64;
    tf - (1.0 + 0.5 * tf.ln()) * tf.sqrt() - 0.25 * tf.ln()
}

pub fn low_t_check(t: usize, p_star: f64) -> LowTCheck {
    let rhs = -p_star.ln();
    let lhs = low_t_lhs(t);
    // The left side is increasing from T = 2 onwards.
    let min_table_size = (2..).find(|&x| low_t_lhs(x) >= rhs).expect("unbounded");
    LowTCheck {
        table_size: t,
        lhs,
        rhs,
        adequate: lhs >= rhs,
        min_table_size,
        exact_adequate: t >= 2 && ln_pld(t, l_star(t), 0) <= p_star.ln(),
    }
}

/// Loopback count for a two-cell table: each loopback after the first yields
/// exactly one bit, so `L = ceil(-log2 p*) + 1`.
pub fn low_t_special_case(p_star: f64) -> usize {
    assert!(p_star > 0.0 && p_star < 1.0, "p* must lie in (0, 1)");
    (-p_star.log2()).ceil() as usize + 1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Alg5Bound {
    pub msl: f64,
    pub rate: f64,
    pub range: f64,
    /// Largest increment bound with `MSL (N + 1) r < R`; zero if none.
    pub n_max: u64,
    pub range_bits: f64,
    pub n_bits: f64,
    pub reduction_bits: f64,
}

/// Largest `N` keeping the counter from wrapping within `2 MSL` seconds at
/// `r` connections per second over a range of `R` ports.
pub fn alg5_bound(msl: f64, rate: f64, range: f64) -> Alg5Bound {
    assert!(msl > 0.0 && rate > 0.0 && range > 0.0, "parameters must be positive");
    let x = range / (msl * rate);
    let n_max = (x.ceil() - 2.0).max(0.0) as u64;
    let n_bits = if n_max > 0 { (n_max as f64).log2() } else { 0.0 };
    let range_bits = range.log2();
    Alg5Bound { msl, rate, range, n_max, range_bits, n_bits, reduction_bits: range_bits - n_bits }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn special_case_small() {
        assert_eq!(low_t_special_case(0.5), 2);
        assert_eq!(low_t_special_case(0.25), 3);
    }

    #[test]
    fn bound_is_tight() {
        for (msl, r, big_r) in [(30.0, 11.4, 28232.0), (120.0, 11.4, 28232.0), (1.0, 1.0, 10.0), (2.0, 3.0, 7.0)] {
            let b = alg5_bound(msl, r, big_r);
            let ok = |n: u64| msl * (n as f64 + 1.0) * r < big_r;
            if b.n_max > 0 {
                assert!(ok(b.n_max));
            }
            assert!(!ok(b.n_max + 1));
        }
    }

    #[test]
    fn two_cells_inadequate() {
        assert!(!low_t_check(2, 1e-3).adequate);
        assert!(!low_t_check(2, 1e-3).exact_adequate);
    }
}
