//! Certified evaluation of the Poissonized moment functionals.
//!
//! Each sum Σ_j mult_j·f(t p_j) is split by level.  Levels with large
//! argument are summed term by term; on the remaining levels `f` is expanded
//! as an alternating power series whose aggregated coefficients are power
//! tails Σ mult·p^m.  Because every per-level series alternates with
//! decreasing terms, the first omitted aggregated term bounds the remainder.

use std::collections::HashMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::frequencies::{FrequencyView, Level, TailSum};
use crate::special::{binomial_exact, ln_binomial, ln_factorial, Neumaier};

/// Iteration cap (levels summed explicitly) per evaluation.
pub const MAX_TERMS: u64 = 100_000_000;

/// Default absolute tolerance.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Value with an absolute truncation-error certificate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Certified {
    pub value: f64,
    pub cert: f64,
}

impl Certified {
    pub fn exact(value: f64) -> Self {
        Self { value, cert: 0.0 }
    }

    fn scale(self, k: f64) -> Self {
        Self {
            value: self.value * k,
            cert: self.cert * k.abs(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Coef {
    /// coefficient rate^k / k!
    Exp { rate: f64 },
    /// coefficient C(n, k) n0^{-k}
    Binom { n: u64, ln_n0: f64 },
}

/// Σ_{k ≥ first} sign (−1)^k e^{ln_abs} coef_k · t^{power+k} P_{power+k}
#[derive(Debug, Clone, Copy)]
struct Component {
    ln_abs: f64,
    sign: f64,
    coef: Coef,
    power: u32,
    first: u32,
}

impl Component {
    fn ln_coef(&self, k: u32) -> f64 {
        let kf = k as f64;
        self.ln_abs
            + match self.coef {
                Coef::Exp { rate } => kf * rate.ln() - ln_factorial(k as u64),
                Coef::Binom { n, ln_n0 } => ln_binomial(n, k as u64) - kf * ln_n0,
            }
    }

    fn sign(&self, k: u32) -> f64 {
        if k % 2 == 0 {
            self.sign
        } else {
            -self.sign
        }
    }

    fn rate(&self) -> f64 {
        match self.coef {
            Coef::Exp { rate } => rate,
            Coef::Binom { .. } => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Head {
    Phi { r: u32 },
    Occupied,
    VarDirect { r: u32 },
    OccupiedVar,
    CovDirect { r: u32, s: u32 },
    Binomial { n: u64, r: u32 },
}

impl Head {
    /// Signed value of f at one box with argument x = e^{ln_x}.
    fn ln_abs(&self, x: f64, ln_x: f64, ln_p: f64) -> (f64, f64) {
        match *self {
            Head::Phi { r } => (-x + r as f64 * ln_x - ln_factorial(r as u64), 1.0),
            Head::Occupied => ((-(-x).exp_m1()).ln(), 1.0),
            Head::VarDirect { r } => {
                let lg = -x + r as f64 * ln_x - ln_factorial(r as u64);
                (lg + (-lg.exp()).ln_1p(), 1.0)
            }
            Head::OccupiedVar => (-x + (-(-x).exp_m1()).ln(), 1.0),
            Head::CovDirect { r, s } => (
                -2.0 * x + (r + s) as f64 * ln_x - ln_factorial(r as u64) - ln_factorial(s as u64),
                -1.0,
            ),
            Head::Binomial { n, r } => {
                let p = ln_p.exp();
                let rest = if n > r as u64 {
                    (n - r as u64) as f64 * (-p).ln_1p()
                } else {
                    0.0
                };
                (ln_binomial(n, r as u64) + r as f64 * ln_p + rest, 1.0)
            }
        }
    }

    fn components(&self) -> Vec<Component> {
        let exp = |ln_abs: f64, sign: f64, rate: f64, power: u32, first: u32| Component {
            ln_abs,
            sign,
            coef: Coef::Exp { rate },
            power,
            first,
        };
        match *self {
            Head::Phi { r } => vec![exp(-ln_factorial(r as u64), 1.0, 1.0, r, 0)],
            Head::Occupied => vec![exp(0.0, -1.0, 1.0, 0, 1)],
            Head::VarDirect { r } => vec![
                exp(-ln_factorial(r as u64), 1.0, 1.0, r, 0),
                exp(-2.0 * ln_factorial(r as u64), -1.0, 2.0, 2 * r, 0),
            ],
            Head::OccupiedVar => vec![exp(0.0, 1.0, 1.0, 0, 1), exp(0.0, -1.0, 2.0, 0, 1)],
            Head::CovDirect { r, s } => vec![exp(
                -ln_factorial(r as u64) - ln_factorial(s as u64),
                -1.0,
                2.0,
                r + s,
                0,
            )],
            Head::Binomial { n, r } => {
                let ln_n0 = (n as f64).ln();
                vec![Component {
                    ln_abs: ln_binomial(n, r as u64) - r as f64 * ln_n0,
                    sign: 1.0,
                    coef: Coef::Binom {
                        n: n - r as u64,
                        ln_n0,
                    },
                    power: r,
                    first: 0,
                }]
            }
        }
    }
}

struct Kernel {
    heads: Vec<Head>,
    comps: Vec<Vec<Component>>,
    ln_scale: f64,
    split: f64,
}

impl Kernel {
    fn new(heads: Vec<Head>, ln_scale: f64) -> Self {
        let comps: Vec<Vec<Component>> = heads.iter().map(|h| h.components()).collect();
        let max_rate = comps
            .iter()
            .flatten()
            .map(|c| c.rate())
            .fold(1.0f64, f64::max);
        Self {
            heads,
            comps,
            ln_scale,
            split: 0.5 / max_rate,
        }
    }
}

/// Evaluate every head of the kernel to absolute tolerance `tol`.
fn evaluate(view: &FrequencyView, kernel: &Kernel, tol: f64) -> Result<Vec<Certified>> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance {tol} must be positive")));
    }
    // levels are nonincreasing, so one probe tells whether the head alone
    // would exhaust the term budget
    let last = MAX_TERMS as usize - 1;
    if let Some(lvl) = view.level(last) {
        if (kernel.ln_scale + lvl.ln_p).exp() > kernel.split {
            return Err(Error::ToleranceNotMet {
                requested: tol,
                achieved: f64::INFINITY,
                terms: MAX_TERMS,
                value: f64::NAN,
            });
        }
    }
    let n_out = kernel.heads.len();
    let mut heads = vec![Neumaier::new(); n_out];
    let mut idx = 0usize;
    let mut next_check = 0usize;
    let mut achieved = f64::INFINITY;
    loop {
        let lvl: Level = match view.level(idx) {
            Some(l) => l,
            None => {
                return finish(heads.iter().map(|h| Certified::exact(h.value())).collect());
            }
        };
        let ln_x = kernel.ln_scale + lvl.ln_p;
        let x = ln_x.exp();
        if x <= kernel.split && idx >= next_check {
            let tail = tail_series(view, kernel, idx, tol);
            let worst = tail.iter().map(|c| c.cert).fold(0.0, f64::max);
            achieved = achieved.min(worst);
            if worst <= tol {
                let out = heads
                    .iter()
                    .zip(&tail)
                    .map(|(h, t)| Certified {
                        value: h.value() + t.value,
                        cert: t.cert,
                    })
                    .collect();
                return finish(out);
            }
            next_check = idx + (idx / 4).max(1);
        }
        for (o, head) in kernel.heads.iter().enumerate() {
            let (ln_f, sign) = head.ln_abs(x, ln_x, lvl.ln_p);
            heads[o].add(sign * (lvl.ln_mult + ln_f).exp());
        }
        idx += 1;
        if idx as u64 >= MAX_TERMS {
            return Err(Error::ToleranceNotMet {
                requested: tol,
                achieved,
                terms: idx as u64,
                value: heads.first().map_or(f64::NAN, |h| h.value()),
            });
        }
    }
}

fn finish(out: Vec<Certified>) -> Result<Vec<Certified>> {
    if out.iter().any(|c| !c.value.is_finite()) {
        return Err(Error::Overflow);
    }
    Ok(out)
}

/// Alternating-series evaluation of the contribution of levels ≥ idx.
fn tail_series(view: &FrequencyView, kernel: &Kernel, idx: usize, tol: f64) -> Vec<Certified> {
    let mut cache: HashMap<u32, TailSum> = HashMap::new();
    let mut tail = |m: u32| *cache.entry(m).or_insert_with(|| view.level_tail(idx, m));
    let mut out = Vec::with_capacity(kernel.heads.len());
    for comps in &kernel.comps {
        let piece = 1e-2 * tol / comps.len() as f64;
        let mut value = Neumaier::new();
        let mut cert = 0.0;
        for c in comps {
            let mut k = c.first;
            loop {
                let m = c.power + k;
                let p = tail(m);
                if p.ln_value == f64::NEG_INFINITY {
                    break;
                }
                let ln_base = c.ln_coef(k) + m as f64 * kernel.ln_scale;
                if ln_base == f64::NEG_INFINITY {
                    break;
                }
                let upper = (ln_base + p.ln_upper).exp();
                if upper <= piece || k - c.first >= 400 {
                    cert += upper;
                    break;
                }
                let mag = (ln_base + p.ln_value).exp();
                value.add(c.sign(k) * mag);
                cert += p.rel_err * mag;
                k += 1;
            }
        }
        out.push(Certified {
            value: value.value(),
            cert,
        });
    }
    out
}

fn ln_t(t: f64) -> Result<f64> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!("time t = {t} must be finite and ≥ 0")));
    }
    Ok(t.ln())
}

/// Φ_r(t) = Σ_j e^{−t p_j}(t p_j)^r / r!.
pub fn phi(view: &FrequencyView, r: u32, t: f64, tol: f64) -> Result<Certified> {
    Ok(phi_many(view, &[r], t, tol)?[0])
}

/// Φ_r(t) for several r in one pass.
pub fn phi_many(view: &FrequencyView, rs: &[u32], t: f64, tol: f64) -> Result<Vec<Certified>> {
    check_orders(rs)?;
    let k = Kernel::new(rs.iter().map(|&r| Head::Phi { r }).collect(), ln_t(t)?);
    evaluate(view, &k, tol)
}

/// Φ(t) = Σ_j (1 − e^{−t p_j}), the mean number of occupied boxes.
pub fn phi_occupied(view: &FrequencyView, t: f64, tol: f64) -> Result<Certified> {
    let k = Kernel::new(vec![Head::Occupied], ln_t(t)?);
    Ok(evaluate(view, &k, tol)?[0])
}

/// V(t) = Σ_j u_j(1 − u_j), u_j = 1 − e^{−t p_j}: variance of the occupied count.
pub fn occupied_variance(view: &FrequencyView, t: f64, tol: f64) -> Result<Certified> {
    let k = Kernel::new(vec![Head::OccupiedVar], ln_t(t)?);
    Ok(evaluate(view, &k, tol)?[0])
}

/// V_r(t) in the direct form Σ_j p_{j,r}(1 − p_{j,r}), cross-checked against
/// Φ_r(t) − 2^{−2r} C(2r,r) Φ_{2r}(2t).
pub fn variance(view: &FrequencyView, r: u32, t: f64, tol: f64) -> Result<Certified> {
    Ok(variances(view, &[r], t, tol)?[0])
}

/// Variances for several r, with the same cross-check.
pub fn variances(view: &FrequencyView, rs: &[u32], t: f64, tol: f64) -> Result<Vec<Certified>> {
    check_orders(rs)?;
    let direct = variances_direct(view, rs, t, tol)?;
    let via = variances_via_phi(view, rs, t, tol)?;
    for ((&r, d), v) in rs.iter().zip(&direct).zip(&via) {
        let slack = d.cert + v.cert + 1e-11 * d.value.abs().max(v.value.abs()) + 1e-300;
        if (d.value - v.value).abs() > slack {
            return Err(Error::Inconsistent(format!(
                "variance forms disagree at r = {r}, t = {t}: direct {} vs {}",
                d.value, v.value
            )));
        }
    }
    Ok(direct)
}

/// Direct Bernoulli-variance form only.
pub fn variances_direct(view: &FrequencyView, rs: &[u32], t: f64, tol: f64) -> Result<Vec<Certified>> {
    check_orders(rs)?;
    let k = Kernel::new(rs.iter().map(|&r| Head::VarDirect { r }).collect(), ln_t(t)?);
    evaluate(view, &k, tol)
}

/// Φ_r(t) − 2^{−2r} C(2r,r) Φ_{2r}(2t) only.
pub fn variances_via_phi(view: &FrequencyView, rs: &[u32], t: f64, tol: f64) -> Result<Vec<Certified>> {
    check_orders(rs)?;
    let first = phi_many(view, rs, t, tol / 2.0)?;
    let doubled: Vec<u32> = rs.iter().map(|r| 2 * r).collect();
    let second = phi_many(view, &doubled, 2.0 * t, tol / 2.0)?;
    Ok(rs
        .iter()
        .zip(first.iter().zip(&second))
        .map(|(&r, (a, b))| {
            let k = central_weight(r, r);
            Certified {
                value: a.value - k * b.value,
                cert: a.cert + k * b.cert,
            }
        })
        .collect())
}

/// 2^{−r−s} C(r+s, r)
pub(crate) fn central_weight(r: u32, s: u32) -> f64 {
    let n = (r + s) as u64;
    let ln_c = match binomial_exact(n, r as u64) {
        Some(b) if n <= 64 => (b as f64).ln(),
        _ => ln_binomial(n, r as u64),
    };
    (ln_c - n as f64 * std::f64::consts::LN_2).exp()
}

/// C_rs(t) = −2^{−r−s} C(r+s, r) Φ_{r+s}(2t), r ≠ s.
pub fn covariance(view: &FrequencyView, r: u32, s: u32, t: f64, tol: f64) -> Result<Certified> {
    if r == s || r == 0 || s == 0 {
        return Err(Error::InvalidParameter(format!("covariance needs distinct r, s ≥ 1 (got {r}, {s})")));
    }
    let k = central_weight(r, s);
    Ok(phi(view, r + s, 2.0 * t, tol / k.max(1e-300))?.scale(-k))
}

/// −Σ_j p_{j,r}(t) p_{j,s}(t), the direct form of the covariance.
pub fn covariance_direct(view: &FrequencyView, r: u32, s: u32, t: f64, tol: f64) -> Result<Certified> {
    if r == s || r == 0 || s == 0 {
        return Err(Error::InvalidParameter(format!("covariance needs distinct r, s ≥ 1 (got {r}, {s})")));
    }
    let k = Kernel::new(vec![Head::CovDirect { r, s }], ln_t(t)?);
    Ok(evaluate(view, &k, tol)?[0])
}

/// E X_{n,r} = Σ_j C(n,r) p_j^r (1 − p_j)^{n−r}.
pub fn binomial_mean(view: &FrequencyView, n: u64, r: u32, tol: f64) -> Result<Certified> {
    if r as u64 > n {
        return Err(Error::InvalidParameter(format!("need r ≤ n (r = {r}, n = {n})")));
    }
    if r == 0 {
        // empty boxes: only meaningful on a finite support
        let len = view
            .support_len()
            .ok_or_else(|| Error::InvalidParameter("r = 0 needs a finite support".into()))?;
        let occupied = binomial_occupied(view, n)?;
        return Ok(Certified::exact(len as f64 - occupied));
    }
    let k = Kernel::new(vec![Head::Binomial { n, r }], (n as f64).ln());
    Ok(evaluate(view, &k, tol)?[0])
}

fn binomial_occupied(view: &FrequencyView, n: u64) -> Result<f64> {
    let mut acc = Neumaier::new();
    let mut idx = 0;
    while let Some(l) = view.level(idx) {
        let p = l.ln_p.exp();
        acc.add(l.ln_mult.exp() * -(n as f64 * (-p).ln_1p()).exp_m1());
        idx += 1;
    }
    Ok(acc.value())
}

fn check_orders(rs: &[u32]) -> Result<()> {
    if rs.is_empty() || rs.contains(&0) {
        return Err(Error::InvalidParameter("count orders must be ≥ 1".into()));
    }
    Ok(())
}

/// Correlation matrix Σ_R(t) of the standardized counts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovMatrix {
    pub index_set: Vec<u32>,
    pub t: f64,
    /// Row-major entries; diagonal exactly 1.
    pub matrix: Vec<Vec<f64>>,
    /// Largest certificate among the underlying covariances and variances.
    pub cert: f64,
}

impl CovMatrix {
    pub fn dim(&self) -> usize {
        self.index_set.len()
    }

    pub fn get(&self, r: u32, s: u32) -> Option<f64> {
        let i = self.index_set.iter().position(|&x| x == r)?;
        let j = self.index_set.iter().position(|&x| x == s)?;
        Some(self.matrix[i][j])
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let n = self.dim();
        let m = DMatrix::from_fn(n, n, |i, j| self.matrix[i][j]);
        let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().cloned().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }
}

/// Check an index set: nonempty, strictly increasing, entries ≥ 1.
pub fn check_index_set(rs: &[u32]) -> Result<()> {
    if rs.is_empty() {
        return Err(Error::InvalidParameter("index set is empty".into()));
    }
    if rs[0] == 0 || rs.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter(format!(
            "index set {rs:?} must be strictly increasing with entries ≥ 1"
        )));
    }
    Ok(())
}

/// Σ_R(t) with entries C_rs / √(V_r V_s).
pub fn corr_matrix(view: &FrequencyView, rs: &[u32], t: f64, tol: f64) -> Result<CovMatrix> {
    check_index_set(rs)?;
    let vars = variances(view, rs, t, tol)?;
    for (&r, v) in rs.iter().zip(&vars) {
        if v.value < 1e-12 {
            return Err(Error::DegenerateVariance { r, value: v.value });
        }
    }
    let mut sums: Vec<u32> = Vec::new();
    for (i, &r) in rs.iter().enumerate() {
        for &s in &rs[i + 1..] {
            if !sums.contains(&(r + s)) {
                sums.push(r + s);
            }
        }
    }
    let doubled = if sums.is_empty() {
        Vec::new()
    } else {
        phi_many(view, &sums, 2.0 * t, tol)?
    };
    let n = rs.len();
    let mut matrix = vec![vec![0.0; n]; n];
    let mut cert = vars.iter().map(|v| v.cert).fold(0.0, f64::max);
    for i in 0..n {
        matrix[i][i] = 1.0;
        for j in i + 1..n {
            let (r, s) = (rs[i], rs[j]);
            let pos = sums.iter().position(|&m| m == r + s).unwrap();
            let k = central_weight(r, s);
            let c = doubled[pos].scale(-k);
            cert = cert.max(c.cert);
            let v = c.value / (vars[i].value.sqrt() * vars[j].value.sqrt());
            matrix[i][j] = v;
            matrix[j][i] = v;
        }
    }
    Ok(CovMatrix {
        index_set: rs.to_vec(),
        t,
        matrix,
        cert,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentEntry {
    pub t: f64,
    pub r: u32,
    pub phi: f64,
    pub var: f64,
    pub cert: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CrossEntry {
    pub t: f64,
    pub r: u32,
    pub s: u32,
    pub cov: f64,
    pub corr: f64,
    pub cert: f64,
}

/// Moments over a t-grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentTable {
    pub t_grid: Vec<f64>,
    pub rs: Vec<u32>,
    pub entries: Vec<MomentEntry>,
    pub cross: Vec<CrossEntry>,
}

impl MomentTable {
    pub fn entry(&self, t: f64, r: u32) -> Option<&MomentEntry> {
        self.entries
            .iter()
            .find(|e| e.r == r && (e.t == t || (e.t - t).abs() <= 1e-12 * t.abs()))
    }

    /// CSV with columns t, r, phi, var, cert.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,r,phi,var,cert\n");
        for e in &self.entries {
            out.push_str(&format!("{:e},{},{:e},{:e},{:e}\n", e.t, e.r, e.phi, e.var, e.cert));
        }
        out
    }
}

/// Evaluate Φ_r, V_r (and optionally C_rs, Σ_rs for r < s) on a grid.
pub fn moment_table(
    view: &FrequencyView,
    rs: &[u32],
    t_grid: &[f64],
    tol: f64,
    with_cross: bool,
) -> Result<MomentTable> {
    check_index_set(rs)?;
    let per_t: Vec<Result<(Vec<MomentEntry>, Vec<CrossEntry>)>> = t_grid
        .par_iter()
        .map(|&t| {
            let phis = phi_many(view, rs, t, tol)?;
            let vars = variances(view, rs, t, tol)?;
            let entries: Vec<MomentEntry> = rs
                .iter()
                .zip(phis.iter().zip(&vars))
                .map(|(&r, (p, v))| MomentEntry {
                    t,
                    r,
                    phi: p.value,
                    var: v.value,
                    cert: p.cert.max(v.cert),
                })
                .collect();
            let mut cross = Vec::new();
            if with_cross {
                for (i, &r) in rs.iter().enumerate() {
                    for (j, &s) in rs.iter().enumerate().skip(i + 1) {
                        let c = covariance(view, r, s, t, tol)?;
                        let denom = vars[i].value.sqrt() * vars[j].value.sqrt();
                        let corr = if denom > 0.0 { c.value / denom } else { f64::NAN };
                        cross.push(CrossEntry {
                            t,
                            r,
                            s,
                            cov: c.value,
                            corr,
                            cert: c.cert,
                        });
                    }
                }
            }
            Ok((entries, cross))
        })
        .collect();
    let mut entries = Vec::new();
    let mut cross = Vec::new();
    for item in per_t {
        let (e, c) = item?;
        entries.extend(e);
        cross.extend(c);
    }
    Ok(MomentTable {
        t_grid: t_grid.to_vec(),
        rs: rs.to_vec(),
        entries,
        cross,
    })
}

/// Geometric grid start·factor^k, k = 0..points.
pub fn geometric_grid(start: f64, factor: f64, points: usize) -> Vec<f64> {
    (0..points).map(|k| start * factor.powi(k as i32)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frequencies::FrequencySpec;

    fn single() -> FrequencyView {
        FrequencyView::new(FrequencySpec::Explicit { p: vec![1.0] }).unwrap()
    }

    #[test]
    fn single_box_values() {
        let v = single();
        let e1 = (-1.0f64).exp();
        assert!((phi(&v, 1, 1.0, 1e-12).unwrap().value - e1).abs() < 1e-15);
        assert!((phi_occupied(&v, 1.0, 1e-12).unwrap().value - (1.0 - e1)).abs() < 1e-15);
        assert!((variance(&v, 1, 1.0, 1e-12).unwrap().value - e1 * (1.0 - e1)).abs() < 1e-15);
        let c = covariance(&v, 1, 2, 1.0, 1e-12).unwrap().value;
        assert!((c + (-2.0f64).exp() / 2.0).abs() < 1e-15);
        assert_eq!(c, covariance(&v, 2, 1, 1.0, 1e-12).unwrap().value);
    }

    #[test]
    fn zero_time() {
        let v = FrequencyView::new(FrequencySpec::PowerLaw {
            exponent: 2.0,
            prefactor: None,
        })
        .unwrap();
        assert_eq!(phi(&v, 1, 0.0, 1e-12).unwrap().value, 0.0);
        assert_eq!(variance(&v, 1, 0.0, 1e-12).unwrap().value, 0.0);
    }

    #[test]
    fn binomial_two_boxes() {
        let v = FrequencyView::new(FrequencySpec::Explicit { p: vec![0.5, 0.5] }).unwrap();
        assert!((binomial_mean(&v, 2, 1, 1e-12).unwrap().value - 1.0).abs() < 1e-15);
        assert!((binomial_mean(&v, 2, 2, 1e-12).unwrap().value - 0.5).abs() < 1e-15);
        assert!((binomial_mean(&v, 2, 0, 1e-12).unwrap().value - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_tolerance() {
        assert!(phi(&single(), 1, 1.0, 0.0).is_err());
        assert!(covariance(&single(), 2, 2, 1.0, 1e-9).is_err());
    }

    #[test]
    fn table_csv_shape() {
        let v = FrequencyView::new(FrequencySpec::Geometric { q: 0.5 }).unwrap();
        let tab = moment_table(&v, &[1, 2], &geometric_grid(1.0, 2.0, 5), 1e-10, true).unwrap();
        assert_eq!(tab.entries.len(), 10);
        assert_eq!(tab.cross.len(), 5);
        assert_eq!(tab.to_csv().lines().count(), 11);
    }
}
