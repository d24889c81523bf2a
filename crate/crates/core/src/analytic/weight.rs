//! Number types the closed forms are evaluated in.

use std::sync::OnceLock;

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Zero};
use statrs::function::factorial::ln_factorial;

const LN_FACT_TABLE: usize = 4096;

fn ln_fact(n: u64) -> f64 {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    let table = TABLE.get_or_init(|| (0..LN_FACT_TABLE as u64).map(ln_factorial).collect());
    table.get(n as usize).copied().unwrap_or_else(|| ln_factorial(n))
}

/// `ln C(n, k)`, or `None` when the coefficient is zero.
pub fn ln_choose(n: i64, k: i64) -> Option<f64> {
    if n < 0 || k < 0 || k > n {
        return None;
    }
    let (n, k) = (n as u64, k as u64);
    Some(ln_fact(n) - ln_fact(k) - ln_fact(n - k))
}

pub fn big_choose(n: i64, k: i64) -> BigUint {
    if n < 0 || k < 0 || k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k) as u64;
    let n = n as u64;
    let mut acc = BigUint::one();
    for i in 0..k {
        acc *= n - i;
        acc /= i + 1;
    }
    acc
}

/// A probability-valued field element. `ratio` builds
/// `prod C(num) / (prod C(den) * 2^halvings)`; a zero denominator coefficient
/// yields zero, matching the `C(n, r) = 0` convention.
pub trait Weight: Clone + Send + Sync {
    fn zero() -> Self;
    fn ratio(num: &[(i64, i64)], den: &[(i64, i64)], halvings: u32) -> Self;
    fn add(&self, other: &Self) -> Self;
    fn mul(&self, other: &Self) -> Self;
    /// Sums a batch of non-negative terms.
    fn sum(terms: Vec<Self>) -> Self;
}

impl Weight for f64 {
    fn zero() -> Self {
        0.0
    }

    fn ratio(num: &[(i64, i64)], den: &[(i64, i64)], halvings: u32) -> Self {
        let mut ln = -(halvings as f64) * std::f64::consts::LN_2;
        for &(n, k) in num {
            match ln_choose(n, k) {
                Some(v) => ln += v,
                None => return 0.0,
            }
        }
        for &(n, k) in den {
            match ln_choose(n, k) {
                Some(v) => ln -= v,
                None => return 0.0,
            }
        }
        ln.exp()
    }

    fn add(&self, other: &Self) -> Self {
        self + other
    }

    fn mul(&self, other: &Self) -> Self {
        self * other
    }

    fn sum(mut terms: Vec<Self>) -> Self {
        // Smallest first.
        terms.sort_by(f64::total_cmp);
        terms.into_iter().sum()
    }
}

impl Weight for BigRational {
    fn zero() -> Self {
        Zero::zero()
    }

    fn ratio(num: &[(i64, i64)], den: &[(i64, i64)], halvings: u32) -> Self {
        let mut n = BigUint::one();
        for &(a, b) in num {
            n *= big_choose(a, b);
        }
        let mut d = BigUint::one() << halvings;
        for &(a, b) in den {
            d *= big_choose(a, b);
        }
        if n.is_zero() || d.is_zero() {
            return Zero::zero();
        }
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    fn add(&self, other: &Self) -> Self {
        self + other
    }

    fn mul(&self, other: &Self) -> Self {
        self * other
    }

    fn sum(terms: Vec<Self>) -> Self {
        terms.into_iter().fold(Zero::zero(), |a, b| a + b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn choose_agrees() {
        for n in 0..60 {
            for k in 0..=n {
                let exact: f64 = big_choose(n, k).to_string().parse().unwrap();
                let ln = ln_choose(n, k).unwrap().exp();
                assert!((ln / exact - 1.0).abs() < 1e-12, "C({n},{k})");
            }
        }
        assert_eq!(big_choose(3, 4), BigUint::zero());
        assert!(ln_choose(3, -1).is_none());
        assert!(ln_choose(5000, 2500).unwrap().is_finite());
    }

    #[test]
    fn ratio_zero_convention() {
        assert_eq!(<f64 as Weight>::ratio(&[(2, 1)], &[(1, 2)], 0), 0.0);
        assert_eq!(<f64 as Weight>::ratio(&[(2, 1)], &[], 1), 1.0);
    }
}
