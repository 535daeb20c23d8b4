//! Iteration count of unique-cell discovery.

use serde::Serialize;

use super::exact::LnFactorial;
use super::occupancy::OccupancyDp;
use super::AnalysisError;

/// Expected number of newly covered cells when `k` fresh tuples are tested
/// with `n` of `T` cells already covered.
pub fn expected_new_unique(n: usize, k: usize, t: usize) -> f64 {
    assert!(n <= t, "covered cells exceed table size");
    let tf = t as f64;
    if k == 0 {
        return 0.0;
    }
    (tf - n as f64) / tf * k as f64 * (1.0 - 1.0 / tf).powi(k as i32 - 1)
}

/// Batch size maximising [`expected_new_unique`]; the smaller candidate
/// wins ties.
pub fn optimal_batch_size(t: usize) -> usize {
    assert!(t >= 2, "table size must be at least 2");
    let x = -1.0 / (1.0 - 1.0 / t as f64).ln();
    let lo = x.floor().max(1.0) as usize;
    let hi = x.ceil() as usize;
    let g_lo = expected_new_unique(0, lo, t);
    let g_hi = expected_new_unique(0, hi, t);
    if g_hi > g_lo * (1.0 + 1e-12) {
        hi
    } else {
        lo
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Phase1Distribution {
    pub table_size: usize,
    /// `stop[l - 1]` is the probability of finishing in exactly `l` iterations.
    pub stop: Vec<f64>,
    pub expected: f64,
    pub variance: f64,
    /// Probability mass not yet absorbed when iteration stopped.
    pub residual: f64,
}

impl Phase1Distribution {
    pub fn prob(&self, l: usize) -> f64 {
        if l == 0 {
            return 0.0;
        }
        self.stop.get(l - 1).copied().unwrap_or(0.0)
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Transition matrix `A[i][j]`: from `j` covered cells to `i` covered cells in
/// one iteration of `T - 1` fresh candidates. `j = T` is absorbing and omitted.
pub fn phase1_transition(t: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>), AnalysisError> {
    if t < 2 {
        return Err(AnalysisError::InvalidArgument("table size must be at least 2".into()));
    }
    let mut dp = OccupancyDp::new(t, 1)?;
    dp.advance_to(t - 1);
    let unique = dp.marginal(1);
    let lf = LnFactorial::new(t);
    let mut a = vec![vec![0.0; t]; t + 1];
    for (i, row) in a.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate().take(i + 1) {
            let fresh = i - j;
            let mut acc = 0.0;
            for (k, &pk) in unique.iter().enumerate().take(i + 1).skip(fresh) {
                if pk == 0.0 {
                    continue;
                }
                // k unique tuples occupy k distinct uniform cells; exactly
                // `fresh` of them land outside the j covered ones.
                let landing = k - fresh;
                if landing > j || k > t {
                    continue;
                }
                let ln_p = lf.ln_choose(t - j, fresh) + lf.ln_choose(j, landing) - lf.ln_choose(t, k);
                acc += pk * ln_p.exp();
            }
            *cell = acc;
        }
    }
    Ok((unique, a))
}

/// Exact stopping-time distribution, iterated until the surviving mass drops
/// below `1e-17`.
pub fn phase1_stop_distribution(t: usize) -> Result<Phase1Distribution, AnalysisError> {
    let (unique, a) = phase1_transition(t)?;
    let mut p = unique;
    let mut stop = Vec::new();
    let max_iter = 100_000;
    let mut residual = 1.0;
    for _ in 0..max_iter {
        stop.push(p[t]);
        let mut next = vec![0.0; t + 1];
        for (i, row) in a.iter().enumerate() {
            next[i] = row.iter().zip(&p[..t]).map(|(x, y)| x * y).sum();
        }
        residual = next[..t].iter().sum::<f64>() + next[t];
        p = next;
        if residual < 1e-17 {
            break;
        }
    }
    let expected: f64 = stop.iter().enumerate().map(|(i, p)| (i + 1) as f64 * p).sum();
    let second: f64 = stop.iter().enumerate().map(|(i, p)| ((i + 1) as f64).powi(2) * p).sum();
    Ok(Phase1Distribution { table_size: t, stop, expected, variance: second - expected * expected, residual })
}
