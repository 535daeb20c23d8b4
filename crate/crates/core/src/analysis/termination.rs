//! Collision-structure probability and the termination table `n*_l`.

use serde::Serialize;

use super::AnalysisError;

/// Acceptance threshold for a population of `n` devices tolerating an
/// expected `c_star` ID collisions: `c_star / C(n, 2)`.
pub fn pstar_for_population(n: u64, c_star: f64) -> f64 {
    assert!(n >= 2, "population must have at least two devices");
    let nf = n as f64;
    2.0 * c_star / (nf * (n - 1) as f64)
}

/// `ln P^l(n)`; `-inf` outside `1 <= l`, `max(0, l - T) <= n <= l - 1`.
pub fn ln_pld(t: usize, l: usize, n: usize) -> f64 {
    if l == 0 || n + 1 > l || n + t < l {
        return f64::NEG_INFINITY;
    }
    let tf = t as f64;
    let distinct = l - n;
    let mut acc = 0.0;
    for i in 0..distinct {
        acc += (1.0 - i as f64 / tf).ln();
    }
    acc - n as f64 * tf.ln()
}

/// Probability that a random device reproduces a given collision structure
/// with `n` independent pairs among `l` loopback tuples.
pub fn pld(t: usize, l: usize, n: usize) -> f64 {
    ln_pld(t, l, n).exp()
}

/// `ceil(-log_T p*)`: no `n*_l` exceeds this.
pub fn n_upper_bound(t: usize, p_star: f64) -> usize {
    (-p_star.ln() / (t as f64).ln()).ceil().max(0.0) as usize
}

/// `floor(T - sqrt(T)) + 1`, the largest `l` the termination analysis covers.
pub fn l_star(t: usize) -> usize {
    let tf = t as f64;
    (tf - tf.sqrt()).floor() as usize + 1
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NstarTable {
    pub table_size: usize,
    pub p_star: f64,
    pub l_min: usize,
    pub l_max: usize,
    /// `nstar[l]` for `l = 0..=l_max`; `None` where no `n` qualifies.
    pub nstar: Vec<Option<usize>>,
}

impl NstarTable {
    /// `n*_l`; beyond `l_max` the table stays at zero.
    pub fn get(&self, l: usize) -> Option<usize> {
        if l > self.l_max {
            return Some(0);
        }
        self.nstar[l]
    }

    pub fn should_terminate(&self, n: usize, l: usize) -> bool {
        matches!(self.get(l), Some(required) if n >= required)
    }

    /// `(l, n*_l)` for `l_min <= l <= l_max`.
    pub fn rows(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.l_min..=self.l_max).filter_map(move |l| self.nstar[l].map(|n| (l, n)))
    }

    /// Maximal runs of equal `n*_l`, as `(first_l, last_l, n)`.
    pub fn bands(&self) -> Vec<(usize, usize, usize)> {
        let mut out: Vec<(usize, usize, usize)> = Vec::new();
        for (l, n) in self.rows() {
            match out.last_mut() {
                Some(last) if last.2 == n && last.1 + 1 == l => last.1 = l,
                _ => out.push((l, l, n)),
            }
        }
        out
    }
}

/// Builds `n*_l` by binary search over `n in [0, min(n_UB, l - 1)]`.
pub fn nstar_table(t: usize, p_star: f64) -> Result<NstarTable, AnalysisError> {
    if t < 2 {
        return Err(AnalysisError::InvalidArgument("table size must be at least 2".into()));
    }
    if !(p_star > 0.0 && p_star < 1.0) {
        return Err(AnalysisError::InvalidArgument(format!("p* = {p_star} must lie in (0, 1)")));
    }
    let ln_p = p_star.ln();
    let ls = l_star(t);
    if ln_pld(t, ls, 0) > ln_p {
        return Err(AnalysisError::NoSolution { table_size: t, p_star });
    }
    let l_max = (1..=ls).find(|&l| ln_pld(t, l, 0) <= ln_p).expect("bounded by l*");
    let n_ub = n_upper_bound(t, p_star);
    let mut nstar = vec![None; l_max + 1];
    for (l, slot) in nstar.iter_mut().enumerate().skip(1) {
        let hi = n_ub.min(l - 1);
        if ln_pld(t, l, hi) > ln_p {
            continue;
        }
        let (mut lo, mut hi) = (0usize, hi);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if ln_pld(t, l, mid) <= ln_p {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        *slot = Some(lo);
    }
    let l_min = nstar.iter().position(Option::is_some).expect("l_max qualifies");
    Ok(NstarTable { table_size: t, p_star, l_min, l_max, nstar })
}
