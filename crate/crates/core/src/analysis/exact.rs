//! Arbitrary-precision helpers shared by the analysis routines.

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};

/// `C(n, k)` as an exact integer.
pub fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc *= n - i;
        acc /= i + 1;
    }
    acc
}

/// Correctly scaled `num / den` for arbitrarily large operands. Values below
/// the subnormal range flush to zero.
pub fn ratio_to_f64(num: &BigUint, den: &BigUint) -> f64 {
    assert!(!den.is_zero(), "division by zero");
    if num.is_zero() {
        return 0.0;
    }
    // Keep ~66 significant bits in the integer quotient.
    let shift = den.bits() as i64 - num.bits() as i64 + 66;
    let quotient = if shift >= 0 {
        (num << shift as u64) / den
    } else {
        num / (den << (-shift) as u64)
    };
    let mut value = quotient.to_f64().unwrap_or(f64::INFINITY);
    let mut remaining = shift;
    while remaining > 0 {
        let chunk = remaining.min(1000);
        value *= 2f64.powi(-(chunk as i32));
        remaining -= chunk;
    }
    while remaining < 0 {
        let chunk = (-remaining).min(1000);
        value *= 2f64.powi(chunk as i32);
        remaining += chunk;
    }
    value
}

/// Table of `ln(n!)` for `n <= max`.
#[derive(Debug, Clone)]
pub struct LnFactorial {
    table: Vec<f64>,
}

impl LnFactorial {
    pub fn new(max: usize) -> Self {
        let mut table = Vec::with_capacity(max + 1);
        table.push(0.0);
        let mut acc = 0.0f64;
        for i in 1..=max {
            acc += (i as f64).ln();
            table.push(acc);
        }
        Self { table }
    }

    pub fn ln_fact(&self, n: usize) -> f64 {
        self.table[n]
    }

    /// `ln C(n, k)`; `-inf` when `k > n`.
    pub fn ln_choose(&self, n: usize, k: usize) -> f64 {
        if k > n {
            return f64::NEG_INFINITY;
        }
        self.table[n] - self.table[k] - self.table[n - k]
    }
}
