//! Stopping-time distribution of loopback mapping and the resulting ID
//! collision rate.

use serde::Serialize;

use super::occupancy::OccupancyDp;
use super::termination::{pld, NstarTable};
use super::AnalysisError;

#[derive(Debug, Clone, Serialize)]
pub struct Phase2Distribution {
    pub table_size: usize,
    pub p_star: f64,
    /// `stop[l]` is the probability of terminating after exactly `l` loopbacks.
    pub stop: Vec<f64>,
    /// `(l, n, probability)` of terminating at `l` with `n` independent pairs.
    pub joint: Vec<(usize, usize, f64)>,
    pub expected_l: f64,
    pub variance_l: f64,
    /// Probability that two random devices receive the same ID.
    pub p_bar: f64,
    /// `c / c*`, i.e. `p_bar / p*`.
    pub c_over_cstar: f64,
}

/// `p_l(n) = P(mu_0(l) = T + n - l)` for every `l <= l_max`, indexed `[l][n]`.
fn pair_count_distributions(t: usize, l_max: usize) -> Result<Vec<Vec<f64>>, AnalysisError> {
    let mut dp = OccupancyDp::new(t, 0)?;
    let mut out = Vec::with_capacity(l_max + 1);
    for l in 0..=l_max {
        dp.advance_to(l);
        let empty = dp.marginal(0);
        let row = (0..l.max(1))
            .map(|n| {
                let k = t + n;
                if k < l || k - l > t {
                    0.0
                } else {
                    empty[k - l]
                }
            })
            .collect();
        out.push(row);
    }
    Ok(out)
}

fn at(p: &[Vec<f64>], l: usize, n: i64) -> f64 {
    if n < 0 {
        return 0.0;
    }
    p[l].get(n as usize).copied().unwrap_or(0.0)
}

pub fn phase2_stop_distribution(tables: &NstarTable) -> Result<Phase2Distribution, AnalysisError> {
    let t = tables.table_size;
    let tf = t as f64;
    let p = pair_count_distributions(t, tables.l_max)?;
    let mut stop = vec![0.0; tables.l_max + 1];
    let mut joint = Vec::new();
    for l in tables.l_min..=tables.l_max {
        let b = tables.get(l).expect("finite inside [l_min, l_max]") as i64;
        let prev = l - 1;
        if l == tables.l_min {
            let q = at(&p, prev, l as i64 - 2) / tf;
            stop[l] = q;
            joint.push((l, l - 1, q));
            continue;
        }
        let a = tables.get(prev).expect("finite after l_min") as i64;
        let hit = |n: i64| (prev as i64 - n) as f64 / tf;
        if a == b {
            let q = at(&p, prev, a - 1) * hit(a - 1);
            stop[l] = q;
            joint.push((l, b as usize, q));
        } else {
            debug_assert_eq!(a, b + 1);
            let x = at(&p, prev, a - 1);
            let y = at(&p, prev, a - 2) * hit(a - 2);
            stop[l] = x + y;
            joint.push((l, b as usize + 1, x * hit(a - 1)));
            joint.push((l, b as usize, x * (1.0 - hit(a - 1)) + y));
        }
    }
    let expected_l: f64 = stop.iter().enumerate().map(|(l, q)| l as f64 * q).sum();
    let second: f64 = stop.iter().enumerate().map(|(l, q)| (l as f64).powi(2) * q).sum();
    let p_bar: f64 = joint.iter().map(|&(l, n, q)| q * pld(t, l, n)).sum();
    Ok(Phase2Distribution {
        table_size: t,
        p_star: tables.p_star,
        stop,
        joint,
        expected_l,
        variance_l: second - expected_l * expected_l,
        p_bar,
        c_over_cstar: p_bar / tables.p_star,
    })
}
