//! Total-variation bound between the fixed-n counts and their Poissonized
//! version, with the k(n) = max{k : 20 log k / p_k ≤ n} selection rule.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::frequencies::FrequencyView;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KChoice {
    pub k: u64,
    /// k stopped at the end of a finite support.
    pub capped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DepoissonBound {
    pub n: u64,
    pub m: u32,
    pub k: u64,
    pub capped: bool,
    pub p_k: f64,
    pub pi_k: f64,
    pub bound: f64,
    /// m ≤ n p_k / 2; when false the bound is not asserted.
    pub applicable: bool,
}

fn admissible(view: &FrequencyView, k: u64, n: f64) -> bool {
    let p = view.prob(k);
    p > 0.0 && 20.0 * (k as f64).ln() <= n * p
}

/// Largest k with 20 log k / p_k ≤ n. k = 1 is always admissible.
pub fn choose_k(view: &FrequencyView, n: u64) -> Result<KChoice> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be ≥ 1".into()));
    }
    let nf = n as f64;
    let support = view.support_len();
    let cap = support.unwrap_or(u64::MAX / 2);
    // 20 log k / p_k is nondecreasing, so the admissible set is an interval
    let mut lo = 1u64;
    let mut hi = 2u64.min(cap);
    while hi > lo && admissible(view, hi, nf) {
        lo = hi;
        hi = hi.saturating_mul(2).min(cap);
    }
    if hi == lo {
        return Ok(KChoice {
            k: lo,
            capped: support.is_some_and(|s| lo == s),
        });
    }
    // lo admissible, hi not
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if admissible(view, mid, nf) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(KChoice { k: lo, capped: false })
}

/// π_k + 2k e^{−n p_k/10}.
pub fn tv_bound(view: &FrequencyView, n: u64, m: u32) -> Result<DepoissonBound> {
    if m == 0 {
        return Err(Error::InvalidParameter("m must be ≥ 1".into()));
    }
    let choice = choose_k(view, n)?;
    let k = choice.k;
    let p_k = view.prob(k);
    let pi_k = view.power_tail(k, 1).value();
    let nf = n as f64;
    let bound = pi_k + 2.0 * k as f64 * (-nf * p_k / 10.0).exp();
    Ok(DepoissonBound {
        n,
        m,
        k,
        capped: choice.capped,
        p_k,
        pi_k,
        bound,
        applicable: m as f64 <= nf * p_k / 2.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frequencies::FrequencySpec;

    #[test]
    fn finite_support_caps() {
        let v = FrequencyView::new(FrequencySpec::Explicit { p: vec![0.5, 0.5] }).unwrap();
        let c = choose_k(&v, 1_000_000).unwrap();
        assert_eq!(c.k, 2);
        assert!(c.capped);
        let b = tv_bound(&v, 1_000_000, 3).unwrap();
        assert_eq!(b.pi_k, 0.0);
    }

    #[test]
    fn inapplicable_flag() {
        let v = FrequencyView::new(FrequencySpec::Geometric { q: 0.5 }).unwrap();
        let b = tv_bound(&v, 3, 1000).unwrap();
        assert!(!b.applicable);
        assert!(b.bound >= 0.0);
    }
}
