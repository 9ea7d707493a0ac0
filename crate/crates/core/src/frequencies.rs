//! Frequency models `p_1 ≥ p_2 ≥ …` with lazy access, normalization and
//! certified power tails.
//!
//! Internally every model is a sequence of *levels*: a level is a run of
//! boxes sharing one probability.  Ordinary families have one box per level;
//! block families have one level per block.  All downstream sums walk levels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{
    ln_factorial, ln_hurwitz_zeta, ln_upper_gamma, log_add_exp, log_sub_exp, Neumaier,
};

/// Largest log2 block size kept for the doubly-exponential block rules.
pub const MAX_LOG2_BLOCK: f64 = 4096.0;

const LN2: f64 = std::f64::consts::LN_2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FrequencySpec {
    /// p_j = (1 − q) q^{j−1}
    Geometric { q: f64 },
    /// p_j = c j^{−exponent}; c = 1/ζ(exponent) unless given.
    PowerLaw {
        exponent: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        prefactor: Option<f64>,
    },
    /// p_j = c exp(−j^β)
    StretchedExp { beta: f64 },
    /// Decreasing rearrangement of c λ^j / j!, j ≥ 1.
    PoissonWeights { lambda: f64 },
    Blocks { rule: BlockRule },
    /// Finite nonincreasing list, used as given.
    Explicit { p: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BlockRule {
    /// m_i = i, q_i = c 2^{−2^i}
    KarlinEx1,
    /// m_i = 2^{2^i}, q_i = c 2^{−2^{i+1}}
    BgyEx2,
    /// m_i = ⌊2^{(1−β)^{−i}}⌋, q_i = c m_i^{−(1+α)}
    GenEx { beta: f64, alpha: f64 },
    /// m_i = (i−2)!, q_i = 1/i! for i ≥ 2
    Factorial,
    /// Explicit (m_i, q_i) pairs.
    Explicit { blocks: Vec<(u64, f64)> },
}

/// One block of equal frequencies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Block {
    /// Index i in the construction.
    pub index: u32,
    pub ln_m: f64,
    pub ln_q: f64,
    /// Block size when it fits in a u64.
    pub m_exact: Option<u64>,
    /// Cumulative size M_i when it fits in a u64.
    pub end_exact: Option<u64>,
}

impl Block {
    pub fn log2_m(&self) -> f64 {
        self.ln_m / LN2
    }
    pub fn q(&self) -> f64 {
        self.ln_q.exp()
    }
}

/// A run of boxes sharing one probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Level {
    pub ln_mult: f64,
    pub ln_p: f64,
}

/// Σ mult·p^m over a range of levels, in log form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailSum {
    pub ln_value: f64,
    /// Bound on the relative error of `exp(ln_value)`.
    pub rel_err: f64,
    /// Log of a rigorous upper bound.
    pub ln_upper: f64,
}

impl TailSum {
    pub fn zero() -> Self {
        Self {
            ln_value: f64::NEG_INFINITY,
            rel_err: 0.0,
            ln_upper: f64::NEG_INFINITY,
        }
    }

    fn with_rel(ln_value: f64, rel_err: f64) -> Self {
        Self {
            ln_value,
            rel_err,
            ln_upper: ln_value + rel_err.ln_1p(),
        }
    }

    pub fn value(&self) -> f64 {
        self.ln_value.exp()
    }
}

/// Upper bound on Σ_{i>k} p_i^r and whether it is exact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailBound {
    pub bound: f64,
    pub exact: bool,
}

#[derive(Debug, Clone)]
enum Kind {
    Geometric { q: f64, ln_q: f64, ln_1mq: f64 },
    PowerLaw { s: f64 },
    StretchedExp { beta: f64 },
    Table { ln_p: Vec<f64>, poisson: Option<f64> },
    Blocks { blocks: Vec<Block>, factorial: bool },
}

/// Resolved frequency model. Immutable and `Sync`.
#[derive(Debug, Clone)]
pub struct FrequencyView {
    spec: FrequencySpec,
    ln_c: f64,
    total_mass: f64,
    kind: Kind,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

/// Resolve a spec into a view.
pub fn build_frequencies(spec: FrequencySpec) -> Result<FrequencyView> {
    FrequencyView::new(spec)
}

impl FrequencyView {
    pub fn new(spec: FrequencySpec) -> Result<Self> {
        let (ln_c, total_mass, kind) = match &spec {
            FrequencySpec::Geometric { q } => {
                let q = *q;
                if !(q > 0.0 && q < 1.0) {
                    return Err(invalid(format!("geometric ratio q = {q} not in (0,1)")));
                }
                (
                    0.0,
                    1.0,
                    Kind::Geometric {
                        q,
                        ln_q: q.ln(),
                        ln_1mq: (-q).ln_1p(),
                    },
                )
            }
            FrequencySpec::PowerLaw {
                exponent,
                prefactor,
            } => {
                let s = *exponent;
                if !(s > 1.0 && s.is_finite()) {
                    return Err(invalid(format!("power-law exponent {s} must exceed 1")));
                }
                let (ln_zeta, _) = ln_hurwitz_zeta(s, 1.0);
                match prefactor {
                    None => (-ln_zeta, 1.0, Kind::PowerLaw { s }),
                    Some(c) => {
                        if !(*c > 0.0 && c.is_finite()) {
                            return Err(invalid(format!("prefactor {c} must be positive")));
                        }
                        let total = (c.ln() + ln_zeta).exp();
                        if total > 1.0 + 1e-9 {
                            return Err(invalid(format!("prefactor {c} gives total mass {total} > 1")));
                        }
                        (c.ln(), total, Kind::PowerLaw { s })
                    }
                }
            }
            FrequencySpec::StretchedExp { beta } => {
                let beta = *beta;
                if !(beta > 0.0 && beta < 1.0) {
                    return Err(invalid(format!("stretched-exponential beta = {beta} not in (0,1)")));
                }
                let ln_s = stretched_ln_norm(beta);
                (-ln_s, 1.0, Kind::StretchedExp { beta })
            }
            FrequencySpec::PoissonWeights { lambda } => {
                let lambda = *lambda;
                if !(lambda > 0.0 && lambda <= 1e5) {
                    return Err(invalid(format!("poisson lambda = {lambda} not in (0, 1e5]")));
                }
                // c = 1/(e^λ − 1)
                let ln_c = -(lambda + (-(-lambda).exp()).ln_1p());
                let table = poisson_table(lambda, ln_c);
                (
                    ln_c,
                    1.0,
                    Kind::Table {
                        ln_p: table,
                        poisson: Some(lambda),
                    },
                )
            }
            FrequencySpec::Explicit { p } => {
                if p.is_empty() {
                    return Err(invalid("explicit list is empty"));
                }
                for (i, &v) in p.iter().enumerate() {
                    if !(v > 0.0 && v.is_finite()) {
                        return Err(invalid(format!("explicit p[{i}] = {v} is not positive")));
                    }
                    if i > 0 && v > p[i - 1] {
                        return Err(invalid(format!("explicit list increases at position {}", i + 1)));
                    }
                }
                let mut acc = Neumaier::new();
                p.iter().for_each(|&v| acc.add(v));
                let total = acc.value();
                if total > 1.0 + 1e-9 {
                    return Err(invalid(format!("explicit list sums to {total} > 1")));
                }
                (
                    0.0,
                    total,
                    Kind::Table {
                        ln_p: p.iter().map(|v| v.ln()).collect(),
                        poisson: None,
                    },
                )
            }
            FrequencySpec::Blocks { rule } => {
                let (blocks, factorial, total) = build_blocks(rule)?;
                (0.0, total, Kind::Blocks { blocks, factorial })
            }
        };
        Ok(Self {
            spec,
            ln_c,
            total_mass,
            kind,
        })
    }

    pub fn spec(&self) -> &FrequencySpec {
        &self.spec
    }

    /// Normalization constant c (1 for families without one).
    pub fn normalization(&self) -> f64 {
        self.ln_c.exp()
    }

    pub fn ln_normalization(&self) -> f64 {
        self.ln_c
    }

    /// Σ_j p_j.
    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn is_subprobability(&self) -> bool {
        self.total_mass < 1.0 - 1e-9
    }

    /// Number of boxes when the support is finite.
    pub fn support_len(&self) -> Option<u64> {
        match &self.kind {
            Kind::Table { ln_p, poisson: None } => Some(ln_p.len() as u64),
            Kind::Blocks {
                blocks,
                factorial: false,
            } => blocks.last().and_then(|b| b.end_exact),
            _ => None,
        }
    }

    /// Number of levels, `None` when infinite.
    pub fn level_count(&self) -> Option<usize> {
        match &self.kind {
            Kind::Table { ln_p, poisson: None } => Some(ln_p.len()),
            Kind::Blocks {
                blocks,
                factorial: false,
            } => Some(blocks.len()),
            _ => None,
        }
    }

    /// Blocks of a block family.
    pub fn blocks(&self) -> Option<&[Block]> {
        match &self.kind {
            Kind::Blocks { blocks, .. } => Some(blocks),
            _ => None,
        }
    }

    pub fn is_block_family(&self) -> bool {
        matches!(self.kind, Kind::Blocks { .. })
    }

    /// Level `idx` (0-based), `None` past a finite support.
    pub fn level(&self, idx: usize) -> Option<Level> {
        match &self.kind {
            Kind::Geometric { ln_q, ln_1mq, .. } => Some(Level {
                ln_mult: 0.0,
                ln_p: ln_1mq + idx as f64 * ln_q,
            }),
            Kind::PowerLaw { s } => Some(Level {
                ln_mult: 0.0,
                ln_p: self.ln_c - s * ((idx + 1) as f64).ln(),
            }),
            Kind::StretchedExp { beta } => Some(Level {
                ln_mult: 0.0,
                ln_p: self.ln_c - ((idx + 1) as f64).powf(*beta),
            }),
            Kind::Table { ln_p, poisson } => match ln_p.get(idx) {
                Some(&v) => Some(Level {
                    ln_mult: 0.0,
                    ln_p: v,
                }),
                None => poisson.map(|lambda| Level {
                    ln_mult: 0.0,
                    ln_p: poisson_ln_weight(lambda, self.ln_c, idx as u64 + 1),
                }),
            },
            Kind::Blocks { blocks, factorial } => match blocks.get(idx) {
                Some(b) => Some(Level {
                    ln_mult: b.ln_m,
                    ln_p: b.ln_q,
                }),
                None if *factorial => {
                    let i = idx as u64 + 2;
                    Some(Level {
                        ln_mult: ln_factorial(i - 2),
                        ln_p: -ln_factorial(i),
                    })
                }
                None => None,
            },
        }
    }

    /// Exact multiplicity of a level when it fits in a u64.
    pub fn level_mult(&self, idx: usize) -> Option<u64> {
        match &self.kind {
            Kind::Blocks { blocks, factorial } => match blocks.get(idx) {
                Some(b) => b.m_exact,
                None if *factorial => factorial_u64(idx as u64),
                None => None,
            },
            _ => self.level(idx).map(|_| 1),
        }
    }

    /// Σ_{l ≥ idx} mult_l p_l^m.
    pub fn level_tail(&self, idx: usize, m: u32) -> TailSum {
        assert!(m >= 1);
        let mf = m as f64;
        match &self.kind {
            Kind::Geometric { ln_q, ln_1mq, .. } => {
                let ln_v = mf * ln_1mq + mf * idx as f64 * ln_q - (-(mf * ln_q).exp_m1()).ln();
                TailSum::with_rel(ln_v, 0.0)
            }
            Kind::PowerLaw { s } => {
                let (lz, rel) = ln_hurwitz_zeta(mf * s, (idx + 1) as f64);
                TailSum::with_rel(mf * self.ln_c + lz, rel)
            }
            Kind::StretchedExp { beta } => {
                if idx == 0 {
                    let first = mf * (self.ln_c - 1.0);
                    let rest = stretched_tail(*beta, mf, 1.0);
                    let ln_rest = mf * self.ln_c + rest.ln_value;
                    let ln_v = log_add_exp(first, ln_rest);
                    let w = (ln_rest - ln_v).exp();
                    let mut t = TailSum::with_rel(ln_v, rest.rel_err * w);
                    t.ln_upper = t.ln_upper.min(log_add_exp(first, mf * self.ln_c + rest.ln_upper));
                    t
                } else {
                    let mut t = stretched_tail(*beta, mf, idx as f64);
                    t.ln_value += mf * self.ln_c;
                    t.ln_upper += mf * self.ln_c;
                    t
                }
            }
            Kind::Table { ln_p, poisson } => table_tail(ln_p, *poisson, self.ln_c, idx, mf),
            Kind::Blocks { blocks, factorial } => {
                if *factorial && m == 1 {
                    // Σ_{i ≥ i0} 1/(i(i−1)) = 1/(i0 − 1)
                    let i0 = idx as f64 + 2.0;
                    return TailSum::with_rel(-(i0 - 1.0).ln(), 0.0);
                }
                let mut terms = Vec::new();
                let mut l = idx;
                loop {
                    let lvl = match blocks.get(l) {
                        Some(b) => Level {
                            ln_mult: b.ln_m,
                            ln_p: b.ln_q,
                        },
                        None if *factorial => self.level(l).unwrap(),
                        None => break,
                    };
                    let lt = lvl.ln_mult + mf * lvl.ln_p;
                    terms.push(lt);
                    if *factorial && l >= blocks.len() {
                        let top = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        if lt < top - 50.0 {
                            break;
                        }
                    }
                    l += 1;
                }
                let v = log_sum(&terms);
                // the factorial cut-off drops terms below e^{-50} of the largest
                let rel = if *factorial { 1e-20 } else { 0.0 };
                TailSum::with_rel(v, rel)
            }
        }
    }

    /// Σ_{l ≥ idx} mult_l p_l^m to relative error `rel_tol`, summing levels
    /// explicitly where the closed-form tail is too coarse.
    pub fn level_tail_certified(&self, idx: usize, m: u32, rel_tol: f64) -> TailSum {
        let t0 = self.level_tail(idx, m);
        if t0.rel_err <= rel_tol || t0.ln_value == f64::NEG_INFINITY {
            return t0;
        }
        let mf = m as f64;
        let reference = match self.level(idx) {
            Some(l) => l.ln_mult + mf * l.ln_p,
            None => return TailSum::zero(),
        };
        let mut head = Neumaier::new();
        let mut cur = idx;
        let mut step = 64usize;
        loop {
            for l in cur..cur + step {
                match self.level(l) {
                    Some(lv) => head.add((lv.ln_mult + mf * lv.ln_p - reference).exp()),
                    None => {
                        return TailSum::with_rel(reference + head.value().ln(), 0.0);
                    }
                }
            }
            cur += step;
            let t = self.level_tail(cur, m);
            let tail_scaled = (t.ln_value - reference).exp();
            let total = head.value() + tail_scaled;
            let err = t.rel_err * tail_scaled;
            if err <= rel_tol * total || cur > 100_000_000 {
                let mut out = TailSum::with_rel(reference + total.ln(), err / total);
                let up_scaled = head.value() + (t.ln_upper - reference).exp();
                out.ln_upper = out.ln_upper.min(reference + up_scaled.ln());
                return out;
            }
            step *= 2;
        }
    }

    /// Locate box j ≥ 1: (level index, position within the level, 1-based).
    pub fn level_of_box(&self, j: u64) -> Option<(usize, u64)> {
        assert!(j >= 1, "box indices start at 1");
        match &self.kind {
            Kind::Blocks { blocks, factorial } => {
                let mut start = 0u64;
                let mut idx = 0usize;
                loop {
                    let (m, end) = match blocks.get(idx) {
                        Some(b) => (b.m_exact, b.end_exact),
                        None if *factorial => {
                            let m = factorial_u64(idx as u64)?;
                            (Some(m), start.checked_add(m))
                        }
                        None => return None,
                    };
                    match end {
                        Some(e) if j > e => {
                            start = e;
                            idx += 1;
                            let _ = m;
                        }
                        _ => return Some((idx, j - start)),
                    }
                }
            }
            Kind::Table { ln_p, poisson: None } => {
                if j as usize <= ln_p.len() {
                    Some((j as usize - 1, 1))
                } else {
                    None
                }
            }
            _ => Some((j as usize - 1, 1)),
        }
    }

    /// ln p_j, −∞ past a finite support.
    pub fn ln_prob(&self, j: u64) -> f64 {
        match self.level_of_box(j) {
            Some((idx, _)) => self.level(idx).map_or(f64::NEG_INFINITY, |l| l.ln_p),
            None => f64::NEG_INFINITY,
        }
    }

    /// p_j (0 past a finite support).
    pub fn prob(&self, j: u64) -> f64 {
        match &self.kind {
            Kind::Geometric { q, .. } if j <= i32::MAX as u64 => (1.0 - q) * q.powi(j as i32 - 1),
            Kind::PowerLaw { s } => self.normalization() * (j as f64).powf(-s),
            Kind::Table { ln_p, poisson: None } => match ln_p.get(j as usize - 1) {
                Some(v) => v.exp(),
                None => 0.0,
            },
            _ => self.ln_prob(j).exp(),
        }
    }

    /// Σ_{i>k} p_i^r, accurate, in log form.
    pub fn power_tail(&self, k: u64, r: u32) -> TailSum {
        self.power_tail_rel(k, r, 1e-12)
    }

    fn power_tail_rel(&self, k: u64, r: u32, rel_tol: f64) -> TailSum {
        if k == 0 {
            return self.level_tail_certified(0, r, rel_tol);
        }
        let Some((idx, pos)) = self.level_of_box(k) else {
            return TailSum::zero();
        };
        let rest = self.level_tail_certified(idx + 1, r, rel_tol);
        let lvl = self.level(idx).unwrap();
        let ln_left = match self.level_mult(idx) {
            Some(m) if m == pos => f64::NEG_INFINITY,
            Some(m) => ((m - pos) as f64).ln(),
            None => lvl.ln_mult,
        };
        if ln_left == f64::NEG_INFINITY {
            return rest;
        }
        let partial = ln_left + r as f64 * lvl.ln_p;
        let v = log_add_exp(partial, rest.ln_value);
        let w = (rest.ln_value - v).exp();
        TailSum {
            ln_value: v,
            rel_err: rest.rel_err * w,
            ln_upper: log_add_exp(partial, rest.ln_upper),
        }
    }

    /// Upper bound on Σ_{i>k} p_i^r with an exactness flag.
    pub fn tail_bound(&self, k: u64, r: u32) -> TailBound {
        assert!(r >= 1);
        let rf = r as f64;
        match &self.kind {
            Kind::Geometric { .. } => TailBound {
                bound: self.power_tail(k, r).value(),
                exact: true,
            },
            Kind::Table { poisson: None, .. } => TailBound {
                bound: self.power_tail(k, r).value(),
                exact: true,
            },
            Kind::PowerLaw { s } => {
                let rs = rf * s;
                let c_r = rf * self.ln_c;
                let bound = if k == 0 {
                    (c_r).exp() * (1.0 + 1.0 / (rs - 1.0))
                } else {
                    (c_r + (1.0 - rs) * (k as f64).ln()).exp() / (rs - 1.0)
                };
                TailBound {
                    bound,
                    exact: false,
                }
            }
            Kind::StretchedExp { beta } => {
                // Σ_{i>k} f(i) ≤ ∫_k^∞ f for decreasing f; k = 0 splits off f(1).
                let integral = |a: f64| {
                    -beta.ln() - rf.ln() / beta + ln_upper_gamma(1.0 / beta, rf * a.powf(*beta))
                };
                let ln_b = if k == 0 {
                    log_add_exp(-rf, integral(1.0))
                } else {
                    integral(k as f64)
                };
                TailBound {
                    bound: (rf * self.ln_c + ln_b).exp() * (1.0 + 1e-12),
                    exact: false,
                }
            }
            Kind::Table { .. } => TailBound {
                bound: self.power_tail(k, r).ln_upper.exp() * (1.0 + 1e-12),
                exact: false,
            },
            Kind::Blocks { factorial, .. } => {
                let t = self.power_tail(k, r);
                if *factorial && r > 1 {
                    TailBound {
                        bound: t.ln_upper.exp() * (1.0 + 1e-12),
                        exact: false,
                    }
                } else {
                    TailBound {
                        bound: t.value(),
                        exact: true,
                    }
                }
            }
        }
    }

    /// ρ_{j,r} = p_j^{−r} Σ_{i>j} p_i^r, relative error ≤ 1e-9.
    pub fn rho(&self, j: u64, r: u32) -> f64 {
        if let Some(n) = self.support_len() {
            if j >= n {
                return 0.0;
            }
        }
        let t = self.power_tail_rel(j, r, 1e-10);
        (t.ln_value - r as f64 * self.ln_prob(j)).exp()
    }

    /// ρ at the last box of level `idx`.
    pub fn rho_after_level(&self, idx: usize, r: u32) -> f64 {
        let Some(lvl) = self.level(idx) else {
            return 0.0;
        };
        let t = self.level_tail_certified(idx + 1, r, 1e-10);
        (t.ln_value - r as f64 * lvl.ln_p).exp()
    }

    /// Short human-readable label.
    pub fn label(&self) -> String {
        match &self.spec {
            FrequencySpec::Geometric { q } => format!("geometric(q={q})"),
            FrequencySpec::PowerLaw { exponent, .. } => format!("power_law(exponent={exponent})"),
            FrequencySpec::StretchedExp { beta } => format!("stretched_exp(beta={beta})"),
            FrequencySpec::PoissonWeights { lambda } => format!("poisson_weights(lambda={lambda})"),
            FrequencySpec::Blocks { rule } => match rule {
                BlockRule::KarlinEx1 => "blocks(karlin_ex1)".into(),
                BlockRule::BgyEx2 => "blocks(bgy_ex2)".into(),
                BlockRule::GenEx { beta, alpha } => format!("blocks(gen_ex beta={beta} alpha={alpha})"),
                BlockRule::Factorial => "blocks(factorial)".into(),
                BlockRule::Explicit { blocks } => format!("blocks(explicit, {} blocks)", blocks.len()),
            },
            FrequencySpec::Explicit { p } => format!("explicit({} boxes)", p.len()),
        }
    }
}

fn log_sum(terms: &[f64]) -> f64 {
    let top = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return top;
    }
    let mut acc = Neumaier::new();
    for &t in terms {
        acc.add((t - top).exp());
    }
    top + acc.value().ln()
}

fn factorial_u64(idx: u64) -> Option<u64> {
    // level idx of the factorial rule has (idx)! boxes
    let mut f: u64 = 1;
    for k in 2..=idx {
        f = f.checked_mul(k)?;
    }
    Some(f)
}

fn poisson_ln_weight(lambda: f64, ln_c: f64, j: u64) -> f64 {
    ln_c + j as f64 * lambda.ln() - ln_factorial(j)
}

fn poisson_table(lambda: f64, ln_c: f64) -> Vec<f64> {
    let first = poisson_ln_weight(lambda, ln_c, 1);
    let mut out = Vec::new();
    let mut j = 1u64;
    loop {
        let w = poisson_ln_weight(lambda, ln_c, j);
        out.push(w);
        if j as f64 >= 2.0 * lambda + 2.0 && w < first - 40.0 {
            break;
        }
        j += 1;
    }
    out.sort_by(|a, b| b.partial_cmp(a).unwrap());
    out
}

fn table_tail(ln_p: &[f64], poisson: Option<f64>, ln_c: f64, idx: usize, mf: f64) -> TailSum {
    let reference = if let Some(&v) = ln_p.get(idx) {
        mf * v
    } else if let Some(lambda) = poisson {
        mf * poisson_ln_weight(lambda, ln_c, idx as u64 + 1)
    } else {
        return TailSum::zero();
    };
    let mut acc = Neumaier::new();
    for &v in ln_p.iter().skip(idx) {
        acc.add((mf * v - reference).exp());
    }
    if let Some(lambda) = poisson {
        // beyond the table the weights fall at least geometrically by 1/2
        let mut j = ln_p.len().max(idx) as u64 + 1;
        loop {
            let term = (mf * poisson_ln_weight(lambda, ln_c, j) - reference).exp();
            acc.add(term);
            if term < 1e-18 * acc.value() {
                break;
            }
            j += 1;
        }
    }
    TailSum::with_rel(reference + acc.value().ln(), 2e-18)
}

/// Σ_{j>J} exp(−m j^β) for J ≥ 1 (no prefactor), via Euler–Maclaurin with a
/// bound from the first omitted term.  The summand is completely monotone.
fn stretched_tail(beta: f64, m: f64, big_j: f64) -> TailSum {
    let jb = big_j.powf(beta);
    let ln_f = -m * jb;
    let ln_int = |a: f64| -beta.ln() - m.ln() / beta + ln_upper_gamma(1.0 / beta, m * a.powf(beta));
    let ln_i = ln_int(big_j);
    let g1 = m * beta * big_j.powf(beta - 1.0);
    let g2 = m * beta * (1.0 - beta) * big_j.powf(beta - 2.0);
    let g3 = m * beta * (1.0 - beta) * (2.0 - beta) * big_j.powf(beta - 3.0);
    // Σ_{j>J} f = ∫_J^∞ f − f(J)/2 − f'(J)/12 + R,  f' = −g1 f
    let corr = 0.5 - g1 / 12.0;
    let ratio = (ln_f - ln_i).exp() * corr;
    let upper_rig = ln_int(big_j + 0.5);
    let lower_rig = if (ln_f - ln_i).exp() * 0.5 < 1.0 {
        ln_i + (-(ln_f - ln_i).exp() * 0.5).ln_1p()
    } else {
        -m * (big_j + 1.0).powf(beta)
    };
    let mut est = if ratio < 1.0 {
        ln_i + (-ratio).ln_1p()
    } else {
        f64::NAN
    };
    let err_abs_ln = ln_f + ((g1 * g1 * g1 + 3.0 * g1 * g2 + g3) / 720.0).ln();
    if !est.is_finite() || est > upper_rig || est < lower_rig {
        // coarse regime: midpoint of the rigorous bracket
        est = log_add_exp(upper_rig, lower_rig) - LN2;
        let rel = (log_sub_exp(upper_rig, lower_rig) - LN2 - est).exp();
        return TailSum {
            ln_value: est,
            rel_err: rel,
            ln_upper: upper_rig,
        };
    }
    let rel = (err_abs_ln - est).exp() * (1.0 + 1e-3);
    let rel_bracket = (log_sub_exp(upper_rig, lower_rig) - est).exp();
    TailSum {
        ln_value: est,
        rel_err: rel.min(rel_bracket),
        ln_upper: (est + rel.ln_1p()).min(upper_rig),
    }
}

fn stretched_ln_norm(beta: f64) -> f64 {
    // Σ_{j≥1} exp(−j^β), direct summation then a certified tail
    let mut acc = Neumaier::new();
    let mut j = 0u64;
    let mut checkpoint = 64u64;
    loop {
        while j < checkpoint {
            j += 1;
            acc.add((-(j as f64).powf(beta)).exp());
        }
        let t = stretched_tail(beta, 1.0, j as f64);
        let tv = t.value();
        if tv * t.rel_err <= 1e-15 * acc.value() || j > 50_000_000 {
            acc.add(tv);
            return acc.value().ln();
        }
        checkpoint *= 2;
    }
}

type BuiltBlocks = (Vec<Block>, bool, f64);

fn build_blocks(rule: &BlockRule) -> Result<BuiltBlocks> {
    // (index, ln m, exact m, ln q unnormalized)
    let mut raw: Vec<(u32, f64, Option<u64>, f64)> = Vec::new();
    let mut normalize = true;
    let mut factorial = false;
    match rule {
        BlockRule::KarlinEx1 => {
            for i in 1..=12u32 {
                raw.push((i, (i as f64).ln(), Some(i as u64), -(2f64.powi(i as i32)) * LN2));
            }
        }
        BlockRule::BgyEx2 => {
            for i in 1..=12u32 {
                let e = 2f64.powi(i as i32);
                raw.push((i, e * LN2, pow2_exact(e), -2.0 * e * LN2));
            }
        }
        BlockRule::GenEx { beta, alpha } => {
            let (beta, alpha) = (*beta, *alpha);
            if !(beta > 0.0 && beta < 1.0) {
                return Err(invalid(format!("gen_ex beta = {beta} not in (0,1)")));
            }
            if !(alpha > 0.0 && alpha.is_finite()) {
                return Err(invalid(format!("gen_ex alpha = {alpha} must be positive")));
            }
            let mut i = 1u32;
            loop {
                let e = (1.0 - beta).powi(-(i as i32));
                if e > MAX_LOG2_BLOCK {
                    break;
                }
                let (ln_m, exact) = if e < 53.0 {
                    let m = e.exp2().floor();
                    (m.ln(), Some(m as u64))
                } else {
                    (e * LN2, None)
                };
                raw.push((i, ln_m, exact, -(1.0 + alpha) * ln_m));
                i += 1;
            }
            if raw.len() < 2 {
                return Err(invalid("gen_ex parameters leave fewer than two blocks"));
            }
        }
        BlockRule::Factorial => {
            normalize = false;
            factorial = true;
            for i in 2..=201u32 {
                let i64_ = i as u64;
                raw.push((i, ln_factorial(i64_ - 2), factorial_u64(i64_ - 2), -ln_factorial(i64_)));
            }
        }
        BlockRule::Explicit { blocks } => {
            normalize = false;
            if blocks.is_empty() {
                return Err(invalid("explicit block list is empty"));
            }
            for (k, &(m, q)) in blocks.iter().enumerate() {
                if m == 0 {
                    return Err(invalid(format!("block {} has zero size", k + 1)));
                }
                if !(q > 0.0 && q.is_finite()) {
                    return Err(invalid(format!("block {} level {q} is not positive", k + 1)));
                }
                if k > 0 && q > blocks[k - 1].1 {
                    return Err(invalid(format!("block levels increase at block {}", k + 1)));
                }
                raw.push((k as u32 + 1, (m as f64).ln(), Some(m), q.ln()));
            }
        }
    }
    let ln_total_raw = log_sum(&raw.iter().map(|r| r.1 + r.3).collect::<Vec<_>>());
    let ln_c = if normalize { -ln_total_raw } else { 0.0 };
    let total = if normalize { 1.0 } else { ln_total_raw.exp() };
    if !factorial && total > 1.0 + 1e-9 {
        return Err(invalid(format!("blocks carry total mass {total} > 1")));
    }
    let mut end: Option<u64> = Some(0);
    let blocks = raw
        .into_iter()
        .map(|(index, ln_m, m_exact, ln_q)| {
            end = match (end, m_exact) {
                (Some(e), Some(m)) => e.checked_add(m),
                _ => None,
            };
            Block {
                index,
                ln_m,
                ln_q: ln_q + ln_c,
                m_exact,
                end_exact: end,
            }
        })
        .collect();
    Ok((blocks, factorial, if factorial { 1.0 } else { total }))
}

fn pow2_exact(e: f64) -> Option<u64> {
    if e < 64.0 {
        Some(1u64 << (e as u32))
    } else {
        None
    }
}

/// Dyadic profile m_j = #{l : 2^{−(j+1)} < p_l ≤ 2^{−j}} for j = 0..=j_max.
pub fn dyadic_profile(view: &FrequencyView, j_max: u32) -> Vec<u64> {
    assert!(j_max <= 62, "dyadic profile supports j_max ≤ 62");
    // counts[j] = #{l : p_l > 2^{-j}}
    let above: Vec<u64> = (0..=j_max + 1).map(|j| count_above(view, j)).collect();
    (0..=j_max as usize).map(|j| above[j + 1] - above[j]).collect()
}

/// #{l : p_l > 2^{−e}}
fn count_above(view: &FrequencyView, e: u32) -> u64 {
    let x = 2f64.powi(-(e as i32));
    if view.is_block_family() || matches!(view.kind, Kind::Table { .. }) {
        let mut n = 0u64;
        let mut idx = 0usize;
        while let Some(lvl) = view.level(idx) {
            let p = lvl.ln_p.exp();
            if p <= x {
                break;
            }
            n += view.level_mult(idx).expect("block above 2^-63 fits in u64");
            idx += 1;
        }
        return n;
    }
    // monotone search for the last j with p_j > x; p_j > x forces j < 1/x
    if view.prob(1) <= x {
        return 0;
    }
    let (mut lo, mut hi) = (1u64, 1u64);
    while view.prob(hi) > x {
        lo = hi;
        hi = hi.saturating_mul(2);
        if hi == u64::MAX {
            break;
        }
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if view.prob(mid) > x {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Trend of p_{j+h}/p_j over a window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "trend", rename_all = "snake_case")]
pub enum RatioTrend {
    ToOne,
    ToConstant { value: f64 },
    ToZero,
    Oscillating,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioScan {
    pub h: u64,
    pub j_from: u64,
    pub j_to: u64,
    pub min: f64,
    pub max: f64,
    pub trend: RatioTrend,
}

/// Exact ratios p_{j+h}/p_j for j in [j_from, j_to].
pub fn ratio_scan(view: &FrequencyView, h: u64, j_from: u64, j_to: u64) -> Result<RatioScan> {
    if h == 0 || j_from == 0 || j_to < j_from {
        return Err(invalid("ratio scan needs h ≥ 1 and 1 ≤ j_from ≤ j_to"));
    }
    if j_to - j_from > 50_000_000 {
        return Err(invalid("ratio scan window longer than 5e7"));
    }
    if let Some(n) = view.support_len() {
        if j_to + h > n {
            return Err(Error::SupportExhausted(n));
        }
    }
    let mid = j_from + (j_to - j_from) / 2;
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min2, mut max2) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut sum2 = 0.0;
    let mut n2 = 0u64;
    let mut j = j_from;
    while j <= j_to {
        let ratio = (view.ln_prob(j + h) - view.ln_prob(j)).exp();
        min = min.min(ratio);
        max = max.max(ratio);
        if j >= mid {
            min2 = min2.min(ratio);
            max2 = max2.max(ratio);
            sum2 += ratio;
            n2 += 1;
        }
        j += 1;
    }
    let trend = if max2 - min2 > 0.1 {
        RatioTrend::Oscillating
    } else if min2 > 1.0 - 1e-3 {
        RatioTrend::ToOne
    } else if max2 < 1e-3 {
        RatioTrend::ToZero
    } else {
        RatioTrend::ToConstant {
            value: sum2 / n2 as f64,
        }
    };
    Ok(RatioScan {
        h,
        j_from,
        j_to,
        min,
        max,
        trend,
    })
}
