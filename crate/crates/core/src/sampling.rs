//! Exact simulation of the fixed-n and Poissonized occupancy schemes.
//!
//! Boxes whose expected count is at least one are drawn one by one. All
//! remaining balls fall into the tail and are placed there by exact
//! inverse-CDF sampling over the tail levels. A ball that lands in a level
//! of `m` equal boxes joins one of the `k` boxes already hit there with
//! probability k/m and opens a new box otherwise, which keeps the placement
//! exact even when `m` has no integer representation.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::frequencies::FrequencyView;
use crate::gaussian::standardize;
use crate::moments::{moment_table, DEFAULT_TOL};
use crate::rng::{replicate_stream, Stream};
use crate::special::Neumaier;

pub const DEFAULT_R_CAP: u32 = 32;
/// Per-box expected count from which boxes are drawn individually.
const PREFIX_RATE: f64 = 1.0;
/// Upper limit on individually drawn boxes.
const MAX_PREFIX_BOXES: u64 = 50_000_000;
const MAX_TABLE_LEVELS: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum Scheme {
    FixedN { n: u64 },
    Poissonized { t: f64 },
}

impl Scheme {
    /// n or t, the time at which moments standardize the counts.
    pub fn size(&self) -> f64 {
        match *self {
            Scheme::FixedN { n } => n as f64,
            Scheme::Poissonized { t } => t,
        }
    }
}

/// One realization of the counts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountVector {
    #[serde(flatten)]
    pub scheme: Scheme,
    /// counts[r − 1] = number of boxes holding exactly r balls, r ≤ r_cap.
    pub counts: Vec<u64>,
    /// Boxes with more than r_cap balls.
    pub overflow_boxes: u64,
    /// Balls held by those boxes.
    pub overflow_balls: u64,
    pub occupied: u64,
    pub total_balls: u64,
    /// Boxes drawn individually.
    pub prefix_len: u64,
    /// Balls placed by the tail sampler.
    pub tail_balls: u64,
}

impl CountVector {
    fn new(scheme: Scheme, r_cap: u32) -> Self {
        Self {
            scheme,
            counts: vec![0; r_cap as usize],
            overflow_boxes: 0,
            overflow_balls: 0,
            occupied: 0,
            total_balls: 0,
            prefix_len: 0,
            tail_balls: 0,
        }
    }

    fn tally(&mut self, k: u64) {
        if k == 0 {
            return;
        }
        self.occupied += 1;
        self.total_balls += k;
        if k as usize <= self.counts.len() {
            self.counts[k as usize - 1] += 1;
        } else {
            self.overflow_boxes += 1;
            self.overflow_balls += k;
        }
    }

    /// Number of boxes with exactly r balls (0 above the cap).
    pub fn count(&self, r: u32) -> u64 {
        if r == 0 {
            return 0;
        }
        self.counts.get(r as usize - 1).copied().unwrap_or(0)
    }

    pub fn r_cap(&self) -> u32 {
        self.counts.len() as u32
    }

    /// Σ_r r·counts[r] plus the overflow balls.
    pub fn ball_sum(&self) -> u64 {
        self.counts.iter().enumerate().map(|(i, &c)| (i as u64 + 1) * c).sum::<u64>() + self.overflow_balls
    }
}

struct PrefixBox {
    p: f64,
    /// Σ of the remaining prefix probabilities from this box on, plus the tail.
    suffix: f64,
}

/// Precomputed layout shared by all replicates at one size.
pub struct Sampler<'a> {
    view: &'a FrequencyView,
    scheme: Scheme,
    r_cap: u32,
    prefix: Vec<PrefixBox>,
    tail_start: usize,
    tail_mass: f64,
    /// cum[i] = mass of tail levels tail_start ..= tail_start + i
    cum: Vec<f64>,
    beyond_mass: f64,
    level_limit: Option<usize>,
}

impl<'a> Sampler<'a> {
    pub fn new(view: &'a FrequencyView, scheme: Scheme, r_cap: u32) -> Result<Self> {
        Self::build(view, scheme, r_cap, PREFIX_RATE, true)
    }

    /// Draw boxes with expected count ≥ `rate` individually and send the rest
    /// through the tail sampler, finite supports included. `rate = ∞` routes
    /// every ball through the tail.
    pub fn with_prefix_rate(view: &'a FrequencyView, scheme: Scheme, r_cap: u32, rate: f64) -> Result<Self> {
        Self::build(view, scheme, r_cap, rate, false)
    }

    fn build(view: &'a FrequencyView, scheme: Scheme, r_cap: u32, rate: f64, full_finite: bool) -> Result<Self> {
        if r_cap == 0 {
            return Err(Error::InvalidParameter("r_cap must be ≥ 1".into()));
        }
        let scale = match scheme {
            Scheme::FixedN { n } => {
                if n == 0 {
                    return Err(Error::InvalidParameter("n must be ≥ 1".into()));
                }
                if view.is_subprobability() {
                    return Err(Error::Subprobability);
                }
                n as f64
            }
            Scheme::Poissonized { t } => {
                if !(t > 0.0 && t.is_finite()) {
                    return Err(Error::InvalidParameter(format!("t must be positive and finite, got {t}")));
                }
                t
            }
        };
        let level_limit = view.level_count();
        // finite supports of moderate size are drawn box by box in full
        let all_finite = full_finite && view.support_len().is_some_and(|s| s <= MAX_PREFIX_BOXES);
        let mut probs = Vec::new();
        let mut idx = 0usize;
        while let Some(level) = view.level(idx) {
            let p = level.ln_p.exp();
            if !all_finite && !(scale * p >= rate) {
                break;
            }
            let mult = view
                .level_mult(idx)
                .ok_or_else(|| Error::Workload("a heavy level has too many boxes to draw individually".into()))?;
            if probs.len() as u64 + mult > MAX_PREFIX_BOXES {
                return Err(Error::Workload(format!(
                    "more than {MAX_PREFIX_BOXES} boxes would have to be drawn individually"
                )));
            }
            probs.extend(std::iter::repeat_n(p, mult as usize));
            idx += 1;
        }
        let tail_start = idx;
        let tail_mass = if level_limit.is_some_and(|l| tail_start >= l) {
            0.0
        } else {
            view.level_tail_certified(tail_start, 1, 1e-14).value()
        };
        let mut acc = Neumaier::new();
        let mut cum = Vec::new();
        if tail_mass > 0.0 {
            let mut l = tail_start;
            while cum.len() < MAX_TABLE_LEVELS {
                let Some(level) = view.level(l) else { break };
                acc.add((level.ln_mult + level.ln_p).exp());
                cum.push(acc.value());
                if acc.value() >= tail_mass * (1.0 - 1e-9) {
                    break;
                }
                l += 1;
            }
        }
        let beyond_start = tail_start + cum.len();
        let beyond_mass = if tail_mass == 0.0 || level_limit.is_some_and(|lim| beyond_start >= lim) {
            0.0
        } else {
            view.level_tail(beyond_start, 1).value()
        };
        let tail_total = cum.last().copied().unwrap_or(0.0) + beyond_mass;
        let mut prefix = Vec::with_capacity(probs.len());
        let mut suffix = Neumaier::new();
        suffix.add(tail_total);
        let mut suffixes = vec![0.0; probs.len()];
        for (i, &p) in probs.iter().enumerate().rev() {
            suffix.add(p);
            suffixes[i] = suffix.value();
        }
        for (p, s) in probs.into_iter().zip(suffixes) {
            prefix.push(PrefixBox { p, suffix: s });
        }
        Ok(Self {
            view,
            scheme,
            r_cap,
            prefix,
            tail_start,
            tail_mass: tail_total,
            cum,
            beyond_mass,
            level_limit,
        })
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    /// Number of boxes drawn individually.
    pub fn prefix_len(&self) -> u64 {
        self.prefix.len() as u64
    }

    /// Total probability of the boxes handled by the tail sampler.
    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    pub fn sample(&self, rng: &mut Stream) -> CountVector {
        let mut out = CountVector::new(self.scheme, self.r_cap);
        out.prefix_len = self.prefix.len() as u64;
        let tail_balls = match self.scheme {
            Scheme::Poissonized { t } => {
                for b in &self.prefix {
                    out.tally(poisson(rng, t * b.p));
                }
                poisson(rng, t * self.tail_mass)
            }
            Scheme::FixedN { n } => {
                let mut left = n;
                for b in &self.prefix {
                    if left == 0 {
                        break;
                    }
                    let k = binomial(rng, left, b.p / b.suffix);
                    left -= k;
                    out.tally(k);
                }
                left
            }
        };
        out.tail_balls = tail_balls;
        if tail_balls > 0 {
            self.place_tail(rng, tail_balls, &mut out);
        }
        out
    }

    fn place_tail(&self, rng: &mut Stream, balls: u64, out: &mut CountVector) {
        let mut boxes: BTreeMap<usize, Vec<u64>> = BTreeMap::new();
        for _ in 0..balls {
            let level = self.draw_level(rng);
            let slots = boxes.entry(level).or_default();
            let k = slots.len();
            let joins = match self.view.level_mult(level) {
                Some(m) => (k as u64) >= m || rng.random_range(0..m) < k as u64,
                None => {
                    let ln_m = self.view.level(level).map_or(0.0, |l| l.ln_mult);
                    k > 0 && rng.random::<f64>() < k as f64 * (-ln_m).exp()
                }
            };
            if joins && k > 0 {
                let i = rng.random_range(0..k);
                slots[i] += 1;
            } else {
                slots.push(1);
            }
        }
        for slots in boxes.values() {
            for &c in slots {
                out.tally(c);
            }
        }
    }

    fn draw_level(&self, rng: &mut Stream) -> usize {
        let table_total = self.cum.last().copied().unwrap_or(0.0);
        let u = rng.random::<f64>() * (table_total + self.beyond_mass);
        if u < table_total || self.beyond_mass == 0.0 {
            let i = self.cum.partition_point(|&c| c <= u).min(self.cum.len().saturating_sub(1));
            return self.tail_start + i;
        }
        // inverse CDF beyond the table: smallest idx with tail(idx+1) ≤ target
        let start = self.tail_start + self.cum.len();
        let target = self.beyond_mass - (u - table_total);
        let tail = |idx: usize| -> f64 {
            if self.level_limit.is_some_and(|l| idx >= l) {
                0.0
            } else {
                self.view.level_tail(idx, 1).value()
            }
        };
        let mut lo = start;
        let mut step = 1usize;
        let mut hi = start;
        while tail(hi + 1) > target {
            lo = hi + 1;
            hi = hi.saturating_add(step);
            step = step.saturating_mul(2);
            if let Some(l) = self.level_limit {
                if hi >= l - 1 {
                    hi = l - 1;
                    break;
                }
            }
        }
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if tail(mid + 1) > target {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        lo
    }
}

fn poisson(rng: &mut Stream, lambda: f64) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).map_or(0, |d| d.sample(rng) as u64)
}

fn binomial(rng: &mut Stream, n: u64, p: f64) -> u64 {
    if p >= 1.0 {
        return n;
    }
    if p <= 0.0 {
        return 0;
    }
    Binomial::new(n, p).map_or(0, |d| d.sample(rng))
}

/// One Poissonized realization at time t.
pub fn sample_poissonized(view: &FrequencyView, t: f64, rng: &mut Stream) -> Result<CountVector> {
    Ok(Sampler::new(view, Scheme::Poissonized { t }, DEFAULT_R_CAP)?.sample(rng))
}

/// One fixed-n realization.
pub fn sample_fixed_n(view: &FrequencyView, n: u64, rng: &mut Stream) -> Result<CountVector> {
    Ok(Sampler::new(view, Scheme::FixedN { n }, DEFAULT_R_CAP)?.sample(rng))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    #[serde(flatten)]
    pub scheme: Scheme,
    pub replicates: u64,
    pub r_cap: u32,
    pub seed: u64,
    /// Index set R used for standardization.
    pub index_set: Vec<u32>,
    /// Keep per-replicate standardized vectors in the result.
    pub retain: bool,
}

impl SimConfig {
    pub fn new(scheme: Scheme, replicates: u64, seed: u64, index_set: Vec<u32>) -> Self {
        Self {
            scheme,
            replicates,
            r_cap: DEFAULT_R_CAP,
            seed,
            index_set,
            retain: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::InvalidParameter("replicate count must be ≥ 1".into()));
        }
        crate::moments::check_index_set(&self.index_set)?;
        let max_r = *self.index_set.last().unwrap();
        if self.r_cap < max_r {
            return Err(Error::InvalidParameter(format!("r_cap {} below max(R) = {max_r}", self.r_cap)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    pub config: SimConfig,
    /// Φ_r and V_r at the run size, r ∈ R.
    pub phi: Vec<f64>,
    pub var: Vec<f64>,
    /// Spacing 1/√V_r of the standardized lattice.
    pub lattice_step: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub standardized: Option<Vec<Vec<f64>>>,
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    /// Replicate mean of counts[r], r ∈ R.
    pub raw_mean: Vec<f64>,
    pub mean_occupied: f64,
    pub mean_total_balls: f64,
    pub var_total_balls: f64,
    /// Replicates whose ball bookkeeping did not balance (always 0).
    pub conservation_failures: u64,
}

/// Run replicates in parallel; the result depends only on the view and config.
pub fn monte_carlo(view: &FrequencyView, config: &SimConfig) -> Result<SimResult> {
    config.validate()?;
    let rs = &config.index_set;
    let size = config.scheme.size();
    let table = moment_table(view, rs, &[size], DEFAULT_TOL, false)?;
    let mut phi = Vec::new();
    let mut var = Vec::new();
    for &r in rs {
        let e = table.entry(size, r).expect("entry present");
        if e.var < 1e-12 {
            return Err(Error::DegenerateVariance { r, value: e.var });
        }
        phi.push(e.phi);
        var.push(e.var);
    }
    let sampler = Sampler::new(view, config.scheme, config.r_cap)?;
    let draws: Vec<CountVector> = (0..config.replicates)
        .into_par_iter()
        .map(|i| sampler.sample(&mut replicate_stream(config.seed, i)))
        .collect();
    let standardized: Vec<Vec<f64>> = draws
        .iter()
        .map(|c| standardize(c, rs, &table))
        .collect::<Result<_>>()?;
    let n = draws.len() as f64;
    let (mean, covariance) = mean_and_covariance(&standardized);
    let raw_mean = rs
        .iter()
        .map(|&r| draws.iter().map(|c| c.count(r) as f64).sum::<f64>() / n)
        .collect();
    let mean_occupied = draws.iter().map(|c| c.occupied as f64).sum::<f64>() / n;
    let mean_total_balls = draws.iter().map(|c| c.total_balls as f64).sum::<f64>() / n;
    let var_total_balls = if draws.len() > 1 {
        draws.iter().map(|c| (c.total_balls as f64 - mean_total_balls).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let conservation_failures = draws
        .iter()
        .filter(|c| {
            c.ball_sum() != c.total_balls
                || matches!(config.scheme, Scheme::FixedN { n } if c.total_balls != n)
        })
        .count() as u64;
    Ok(SimResult {
        config: config.clone(),
        lattice_step: var.iter().map(|v| 1.0 / v.sqrt()).collect(),
        phi,
        var,
        standardized: config.retain.then_some(standardized),
        mean,
        covariance,
        raw_mean,
        mean_occupied,
        mean_total_balls,
        var_total_balls,
        conservation_failures,
    })
}

/// Sample mean and (n − 1)-normalized covariance, summed in the given order.
pub fn mean_and_covariance(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = rows.first().map_or(0, |r| r.len());
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..d)
        .map(|i| {
            let mut s = Neumaier::new();
            rows.iter().for_each(|r| s.add(r[i]));
            s.value() / n
        })
        .collect();
    let denom = if rows.len() > 1 { n - 1.0 } else { 1.0 };
    let mut cov = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in i..d {
            let mut s = Neumaier::new();
            rows.iter().for_each(|r| s.add((r[i] - mean[i]) * (r[j] - mean[j])));
            cov[i][j] = s.value() / denom;
            cov[j][i] = cov[i][j];
        }
    }
    (mean, cov)
}
