//! Balls-into-bins occupancy distributions.
//!
//! [`occupancy_pmf`] evaluates the classical alternating-sum formula in exact
//! integer arithmetic. [`OccupancyDp`] is the forward dynamic program over
//! multiplicity profiles `(i_0, ..., i_r)`, which yields `P(mu_s(l) = k)` for
//! every `s <= r`.

use std::collections::HashMap;

use num_bigint::{BigInt, BigUint, Sign};
use num_traits::{Signed, Zero};

use super::exact::{binomial, ratio_to_f64};
use super::AnalysisError;

/// Default ceiling on the number of DP states.
pub const DEFAULT_STATE_CAP: u64 = 4_000_000;

/// `P(mu_0(l) = k)` for `k = 0..=T`: probability that exactly `k` of `T` bins
/// stay empty after `l` uniform throws.
pub fn occupancy_pmf(t: usize, l: usize) -> Vec<f64> {
    assert!(t >= 1, "need at least one bin");
    let powers: Vec<BigUint> = (0..=t).map(|j| BigUint::from(j).pow(l as u32)).collect();
    let denom = BigUint::from(t).pow(l as u32);
    (0..=t)
        .map(|k| {
            let m = t - k;
            let mut sum = BigInt::zero();
            for i in 0..=m {
                let term = BigInt::from_biguint(Sign::Plus, binomial(m as u64, i as u64) * &powers[m - i]);
                if i % 2 == 0 {
                    sum += term;
                } else {
                    sum -= term;
                }
            }
            debug_assert!(!sum.is_negative());
            let num = binomial(t as u64, k as u64) * sum.magnitude();
            ratio_to_f64(&num, &denom)
        })
        .collect()
}

/// Number of multiplicity profiles tracked for `(T, r)`: `C(T+r+1, r+1)`.
pub fn state_count(t: usize, r: usize) -> u128 {
    let n = (t + r + 1) as u128;
    let k = (r + 1) as u128;
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul(n - i) / (i + 1);
    }
    acc
}

#[derive(Debug, Clone)]
struct Edge {
    target: u32,
    weight: f64,
}

/// Forward DP over profiles `(i_0, ..., i_r)` with `sum <= T`.
#[derive(Debug, Clone)]
pub struct OccupancyDp {
    t: usize,
    r: usize,
    states: Vec<Vec<u16>>,
    edges: Vec<Vec<Edge>>,
    probs: Vec<f64>,
    balls: usize,
    ops: u64,
}

impl OccupancyDp {
    pub fn new(t: usize, r: usize) -> Result<Self, AnalysisError> {
        Self::with_cap(t, r, DEFAULT_STATE_CAP)
    }

    pub fn with_cap(t: usize, r: usize, cap: u64) -> Result<Self, AnalysisError> {
        if t == 0 || t > u16::MAX as usize {
            return Err(AnalysisError::InvalidArgument(format!("table size {t} out of range")));
        }
        let count = state_count(t, r);
        if count > u128::from(cap) {
            return Err(AnalysisError::StateTooLarge { states: count, cap });
        }
        let mut states = Vec::with_capacity(count as usize);
        let mut profile = vec![0u16; r + 1];
        enumerate(t, 0, &mut profile, &mut states);
        let index: HashMap<&[u16], u32> = states
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_slice(), i as u32))
            .collect();
        let tf = t as f64;
        let edges = states
            .iter()
            .map(|s| {
                let mut out = Vec::with_capacity(r + 2);
                let total: usize = s.iter().map(|&x| x as usize).sum();
                for bin in 0..=r {
                    if s[bin] == 0 {
                        continue;
                    }
                    let mut next = s.clone();
                    next[bin] -= 1;
                    if bin < r {
                        next[bin + 1] += 1;
                    }
                    out.push(Edge { target: index[next.as_slice()], weight: f64::from(s[bin]) / tf });
                }
                if total < t {
                    out.push(Edge { target: index[s.as_slice()], weight: (t - total) as f64 / tf });
                }
                out
            })
            .collect();
        let mut start = vec![0u16; r + 1];
        start[0] = t as u16;
        let mut probs = vec![0.0; states.len()];
        probs[index[start.as_slice()] as usize] = 1.0;
        Ok(Self { t, r, edges, states, probs, balls: 0, ops: 0 })
    }

    pub fn table_size(&self) -> usize {
        self.t
    }

    pub fn max_multiplicity(&self) -> usize {
        self.r
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    /// Balls thrown so far.
    pub fn balls(&self) -> usize {
        self.balls
    }

    /// Transition work performed so far, counted as `r + 2` per state per ball.
    pub fn ops(&self) -> u64 {
        self.ops
    }

    /// Throws one more ball.
    pub fn step(&mut self) {
        let mut next = vec![0.0; self.probs.len()];
        for (src, edges) in self.edges.iter().enumerate() {
            let p = self.probs[src];
            if p == 0.0 {
                continue;
            }
            for e in edges {
                next[e.target as usize] += p * e.weight;
            }
        }
        self.ops += (self.r as u64 + 2) * self.states.len() as u64;
        self.probs = next;
        self.balls += 1;
    }

    pub fn advance_to(&mut self, l: usize) {
        while self.balls < l {
            self.step();
        }
    }

    /// `P(mu_s = k)` for `k = 0..=T` at the current ball count.
    pub fn marginal(&self, s: usize) -> Vec<f64> {
        assert!(s <= self.r, "multiplicity {s} not tracked (r = {})", self.r);
        let mut out = vec![0.0; self.t + 1];
        for (state, &p) in self.states.iter().zip(&self.probs) {
            out[state[s] as usize] += p;
        }
        out
    }

    pub fn total_mass(&self) -> f64 {
        self.probs.iter().sum()
    }
}

fn enumerate(remaining: usize, pos: usize, profile: &mut Vec<u16>, out: &mut Vec<Vec<u16>>) {
    if pos == profile.len() {
        out.push(profile.clone());
        return;
    }
    for v in 0..=remaining {
        profile[pos] = v as u16;
        enumerate(remaining - v, pos + 1, profile, out);
    }
    profile[pos] = 0;
}

/// Marginals `P(mu_s(l) = k)` for every `s <= r`, indexed `[s][k]`.
pub fn mu_r_pmf(t: usize, l: usize, r: usize) -> Result<Vec<Vec<f64>>, AnalysisError> {
    let mut dp = OccupancyDp::new(t, r)?;
    dp.advance_to(l);
    Ok((0..=r).map(|s| dp.marginal(s)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force(t: usize, l: usize, r: usize) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; t + 1]; r + 1];
        let total = t.pow(l as u32);
        for code in 0..total {
            let mut counts = vec![0usize; t];
            let mut c = code;
            for _ in 0..l {
                counts[c % t] += 1;
                c /= t;
            }
            for (s, row) in out.iter_mut().enumerate() {
                let k = counts.iter().filter(|&&x| x == s).count();
                row[k] += 1.0 / total as f64;
            }
        }
        out
    }

    #[test]
    fn two_bins_two_balls() {
        let pmf = occupancy_pmf(2, 2);
        assert!((pmf[0] - 0.5).abs() < 1e-15);
        assert!((pmf[1] - 0.5).abs() < 1e-15);
        assert_eq!(pmf[2], 0.0);
    }

    #[test]
    fn no_balls_all_empty() {
        let pmf = occupancy_pmf(7, 0);
        assert_eq!(pmf[7], 1.0);
        assert!(pmf[..7].iter().all(|&p| p == 0.0));
    }

    #[test]
    fn dp_matches_enumeration() {
        for (t, l, r) in [(3, 3, 1), (4, 5, 2), (2, 6, 3), (5, 4, 1)] {
            let dp = mu_r_pmf(t, l, r).unwrap();
            let bf = brute_force(t, l, r);
            for s in 0..=r {
                for k in 0..=t {
                    assert!((dp[s][k] - bf[s][k]).abs() < 1e-12, "t={t} l={l} s={s} k={k}");
                }
            }
        }
    }

    #[test]
    fn state_count_formula() {
        for (t, r) in [(3, 0), (3, 1), (10, 2), (16, 3)] {
            let dp = OccupancyDp::new(t, r).unwrap();
            assert_eq!(dp.num_states() as u128, state_count(t, r));
        }
        assert_eq!(state_count(256, 1), 257 * 258 / 2);
    }

    #[test]
    fn ops_counter_follows_complexity() {
        let mut dp = OccupancyDp::new(12, 2).unwrap();
        dp.advance_to(9);
        assert_eq!(dp.ops(), 9 * 4 * state_count(12, 2) as u64);
    }

    #[test]
    fn cap_is_enforced() {
        let err = OccupancyDp::with_cap(256, 3, 1000).unwrap_err();
        assert!(matches!(err, AnalysisError::StateTooLarge { .. }));
    }

    #[test]
    fn closed_form_equals_dp_small() {
        for t in [1usize, 2, 5, 17, 64] {
            let mut dp = OccupancyDp::new(t, 0).unwrap();
            for l in 0..=2 * t {
                dp.advance_to(l);
                let exact = occupancy_pmf(t, l);
                let m = dp.marginal(0);
                for k in 0..=t {
                    assert!((exact[k] - m[k]).abs() < 1e-12, "t={t} l={l} k={k}");
                }
            }
        }
    }
}
