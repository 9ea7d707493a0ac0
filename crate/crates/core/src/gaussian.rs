//! Standardization, the Bentkus-type rate for the normal approximation, and
//! empirical normality checks against a target correlation matrix.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::frequencies::FrequencyView;
use crate::moments::{check_index_set, variances, CovMatrix, MomentTable, DEFAULT_TOL};
use crate::sampling::{mean_and_covariance, CountVector, SimResult};
use crate::special::{normal_cdf, poisson1_upper_tail};

/// ((counts[r] − Φ_r)/√V_r)_{r ∈ R} with moments taken at the sample's n or t.
pub fn standardize(counts: &CountVector, rs: &[u32], moments: &MomentTable) -> Result<Vec<f64>> {
    let size = counts.scheme.size();
    rs.iter()
        .map(|&r| {
            let e = moments.entry(size, r).ok_or(Error::MissingMoments(size))?;
            if e.var < 1e-12 {
                return Err(Error::DegenerateVariance { r, value: e.var });
            }
            Ok((counts.count(r) as f64 - e.phi) / e.var.sqrt())
        })
        .collect()
}

/// Rate object for the multivariate normal approximation. The absolute
/// constant in front is unknown, so `beta` is not a numeric distance bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BentkusBound {
    pub index_set: Vec<u32>,
    pub t: f64,
    /// P(Poisson(1) ≥ r_m + 1) for the largest index r_m.
    pub q: f64,
    pub c_r: f64,
    pub min_var: f64,
    /// (m / c_R)^{3/2} / min √V_r(t)
    pub beta: f64,
}

/// c_R = min(e^{-1}, q(r_m)).
pub fn c_r(rs: &[u32]) -> Result<f64> {
    check_index_set(rs)?;
    let q = poisson1_upper_tail(*rs.last().unwrap());
    Ok(q.min((-1.0f64).exp()))
}

pub fn beta_bound(m: usize, c_r: f64, min_var: f64) -> f64 {
    (m as f64 / c_r).powf(1.5) / min_var.sqrt()
}

pub fn bentkus_bound(view: &FrequencyView, rs: &[u32], t: f64) -> Result<BentkusBound> {
    let c = c_r(rs)?;
    let vars = variances(view, rs, t, DEFAULT_TOL)?;
    let (mut min_var, mut r_min) = (f64::INFINITY, rs[0]);
    for (&r, v) in rs.iter().zip(&vars) {
        if v.value < min_var {
            min_var = v.value;
            r_min = r;
        }
    }
    if min_var < 1e-12 {
        return Err(Error::DegenerateVariance { r: r_min, value: min_var });
    }
    Ok(BentkusBound {
        index_set: rs.to_vec(),
        t,
        q: poisson1_upper_tail(*rs.last().unwrap()),
        c_r: c,
        min_var,
        beta: beta_bound(rs.len(), c, min_var),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormalityThresholds {
    pub ks: f64,
    pub cov: f64,
}

impl Default for NormalityThresholds {
    fn default() -> Self {
        Self { ks: 0.02, cov: 0.03 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalityReport {
    pub index_set: Vec<u32>,
    pub ks: Vec<f64>,
    /// max |empirical − target| over all covariance entries.
    pub cov_deviation: f64,
    pub empirical_cov: Vec<Vec<f64>>,
    pub replicates: u64,
    pub thresholds: NormalityThresholds,
    pub pass: bool,
}

/// Kolmogorov–Smirnov distance between a sample and N(0,1).
///
/// With `step > 0` the sample lives on a lattice of that spacing and each
/// atom is compared against the normal CDF half a step away (continuity
/// correction); `step = 0` gives the ordinary statistic.
pub fn ks_statistic(sample: &[f64], step: f64) -> f64 {
    let mut v = sample.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let h = 0.5 * step;
    let mut d = 0.0f64;
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        // atoms: equal up to rounding of the standardization
        while j + 1 < v.len() && (v[j + 1] - v[i]).abs() <= 1e-9 * (1.0 + v[i].abs()) {
            j += 1;
        }
        let below = i as f64 / n;
        let upto = (j + 1) as f64 / n;
        d = d.max((upto - normal_cdf(v[i] + h)).abs());
        d = d.max((below - normal_cdf(v[i] - h)).abs());
        i = j + 1;
    }
    d
}

/// KS per marginal and covariance deviation; independent of replicate order.
pub fn normality_diagnostics(
    sim: &SimResult,
    target: &CovMatrix,
    thresholds: NormalityThresholds,
) -> Result<NormalityReport> {
    let rows = sim
        .standardized
        .as_ref()
        .ok_or_else(|| Error::Inconsistent("simulation did not retain standardized vectors".into()))?;
    let d = sim.config.index_set.len();
    if target.dim() != d || target.index_set != sim.config.index_set {
        return Err(Error::DimensionMismatch(format!(
            "target index set {:?} vs simulation {:?}",
            target.index_set, sim.config.index_set
        )));
    }
    let mut sorted = rows.clone();
    sorted.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let ks: Vec<f64> = (0..d)
        .map(|i| {
            let col: Vec<f64> = sorted.iter().map(|r| r[i]).collect();
            ks_statistic(&col, sim.lattice_step.get(i).copied().unwrap_or(0.0))
        })
        .collect();
    let (_, cov) = mean_and_covariance(&sorted);
    let mut dev = 0.0f64;
    for i in 0..d {
        for j in 0..d {
            dev = dev.max((cov[i][j] - target.matrix[i][j]).abs());
        }
    }
    let pass = ks.iter().all(|&k| k < thresholds.ks) && dev < thresholds.cov;
    Ok(NormalityReport {
        index_set: sim.config.index_set.clone(),
        ks,
        cov_deviation: dev,
        empirical_cov: cov,
        replicates: rows.len() as u64,
        thresholds,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn c_r_values() {
        let c = c_r(&[1]).unwrap();
        assert!((c - 0.264_241).abs() < 1e-6);
        assert!((beta_bound(2, c, 100.0) - 2.082).abs() < 1e-3);
        // q(r) < e^{-1} already for r ≥ 1
        assert!((c_r(&[1, 2, 3]).unwrap() - poisson1_upper_tail(3)).abs() < 1e-18);
        let b1 = beta_bound(2, c, 100.0);
        let b2 = beta_bound(2, c, 200.0);
        assert!((b1 / b2 - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn ks_of_exact_quantiles_is_small() {
        // midpoints of n equal-probability cells
        let n = 1000;
        let q: Vec<f64> = (0..n)
            .map(|i| {
                let p = (i as f64 + 0.5) / n as f64;
                // invert by bisection
                let (mut lo, mut hi) = (-10.0, 10.0);
                for _ in 0..100 {
                    let m = 0.5 * (lo + hi);
                    if normal_cdf(m) < p {
                        lo = m
                    } else {
                        hi = m
                    }
                }
                lo
            })
            .collect();
        let d = ks_statistic(&q, 0.0);
        assert!((d - 0.5 / n as f64).abs() < 1e-9);
    }
}
