//! Large-time diagnostics: regime classification, index estimation, limiting
//! covariance matrices and the correlation convergence scan.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::frequencies::{ratio_scan, FrequencyView, RatioScan};
use crate::moments::{central_weight, phi_many, variances};
use crate::special::{binomial_exact, gamma, ln_factorial};

/// Tolerance used for moment evaluations inside the diagnostics.
const DIAG_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegimeThresholds {
    pub high: f64,
    pub low: f64,
    /// Fraction of the grid (from the end) forming the late window.
    pub window: f64,
    /// sup/inf ratio above which a series counts as oscillating.
    pub oscillation: f64,
}

impl Default for RegimeThresholds {
    fn default() -> Self {
        Self {
            high: 10.0,
            low: 2.0,
            window: 0.25,
            oscillation: 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "regime", rename_all = "snake_case")]
pub enum Verdict {
    Regime1,
    Regime2 { r0: u32 },
    Regime3,
    Regime4,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderEvidence {
    pub r: u32,
    pub inf: f64,
    pub sup: f64,
    pub oscillating: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RhoTrend {
    pub r: u32,
    /// (level index, ρ at the last box of that level)
    pub points: Vec<(usize, f64)>,
    pub growing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeReport {
    pub verdict: Verdict,
    pub evidence: Vec<OrderEvidence>,
    pub ratios: Vec<RatioScan>,
    pub rho: Vec<RhoTrend>,
    pub thresholds: RegimeThresholds,
    pub t_grid: Vec<f64>,
    /// Φ_r(t) series, one row per grid point, columns r = 1..=r_max.
    pub phi: Vec<Vec<f64>>,
}

/// Positive, increasing, constant ratio.
pub fn check_geometric_grid(grid: &[f64], min_points: usize) -> Result<()> {
    if grid.len() < min_points {
        return Err(Error::GridTooShort {
            got: grid.len(),
            need: min_points,
        });
    }
    if grid.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
        return Err(Error::InvalidParameter("grid points must be positive and finite".into()));
    }
    let f = grid[1] / grid[0];
    if !(f > 1.0) {
        return Err(Error::InvalidParameter("grid must be increasing".into()));
    }
    for w in grid.windows(2) {
        if ((w[1] / w[0]) / f - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter("grid must be geometric".into()));
        }
    }
    Ok(())
}

fn phi_series(view: &FrequencyView, r_max: u32, grid: &[f64]) -> Result<Vec<Vec<f64>>> {
    let rs: Vec<u32> = (1..=r_max).collect();
    grid.par_iter()
        .map(|&t| Ok(phi_many(view, &rs, t, DIAG_TOL)?.iter().map(|c| c.value).collect()))
        .collect()
}

/// Heuristic placement of a frequency model among the four regimes.
pub fn classify_regime(
    view: &FrequencyView,
    r_max: u32,
    t_grid: &[f64],
    thresholds: RegimeThresholds,
) -> Result<RegimeReport> {
    if r_max == 0 {
        return Err(Error::InvalidParameter("r_max must be ≥ 1".into()));
    }
    check_geometric_grid(t_grid, 16)?;
    let series = phi_series(view, r_max, t_grid)?;
    let n = t_grid.len();
    let w = ((n as f64 * thresholds.window).ceil() as usize).clamp(2, n);
    let evidence: Vec<OrderEvidence> = (0..r_max as usize)
        .map(|k| {
            let late = series[n - w..].iter().map(|row| row[k]);
            let (inf, sup) = late.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            let oscillating = ratio_exceeds(sup, inf, thresholds.oscillation);
            OrderEvidence {
                r: k as u32 + 1,
                inf,
                sup,
                oscillating,
            }
        })
        .collect();
    let verdict = decide(&evidence, &thresholds);
    let ratios = (1..=3u64)
        .filter_map(|h| {
            let end = view.support_len().map_or(1 << 16, |len| (1u64 << 16).min(len.saturating_sub(h)));
            if end == 0 {
                return None;
            }
            ratio_scan(view, h, 1, end).ok()
        })
        .collect();
    let rho = (1..=r_max).map(|r| rho_trend(view, r)).collect();
    Ok(RegimeReport {
        verdict,
        evidence,
        ratios,
        rho,
        thresholds,
        t_grid: t_grid.to_vec(),
        phi: series,
    })
}

fn ratio_exceeds(hi: f64, lo: f64, factor: f64) -> bool {
    if lo > 0.0 {
        hi / lo > factor
    } else {
        hi > 0.0
    }
}

fn decide(ev: &[OrderEvidence], th: &RegimeThresholds) -> Verdict {
    if ev.iter().all(|e| e.sup < th.low) {
        return Verdict::Regime4;
    }
    if ev.iter().all(|e| e.inf > th.high) {
        return Verdict::Regime1;
    }
    let r0 = ev.iter().take_while(|e| e.inf > th.high).count();
    if r0 >= 1 && ev[r0..].iter().all(|e| e.oscillating && e.sup > th.high) {
        return Verdict::Regime2 { r0: r0 as u32 };
    }
    if ev[0].oscillating {
        return Verdict::Regime3;
    }
    Verdict::Inconclusive
}

fn rho_trend(view: &FrequencyView, r: u32) -> RhoTrend {
    let levels: Vec<usize> = match view.blocks() {
        Some(b) => (0..b.len().min(30)).collect(),
        None => (0..=16).map(|k| (1usize << k) - 1).collect(),
    };
    let limit = view.level_count().unwrap_or(usize::MAX);
    let points: Vec<(usize, f64)> = levels
        .into_iter()
        .filter(|&l| l + 1 < limit)
        .map(|l| (l, view.rho_after_level(l, r)))
        .collect();
    let growing = match points.len() {
        0 | 1 => false,
        n => {
            let half = points[n / 2].1;
            points[n - 1].1 > 2.0 * half && points[n - 1].1 > 10.0
        }
    };
    RhoTrend { r, points, growing }
}

/// Index estimate from the ratio Φ_{r+1}/Φ_r.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaEstimate {
    pub r: u32,
    pub t_grid: Vec<f64>,
    pub ratios: Vec<f64>,
    /// Median of the last quarter of the ratios.
    pub c: f64,
    pub alpha: f64,
    /// c ∈ [(r−1)/(r+1), r/(r+1)]
    pub in_range: bool,
    /// max − min of the ratio over the last half of the grid.
    pub oscillation: f64,
    pub converged: bool,
}

/// Oscillation allowed in the last half of the ratio series.
pub const ALPHA_CONVERGENCE_TOL: f64 = 0.02;

pub fn estimate_alpha(view: &FrequencyView, r: u32, t_grid: &[f64]) -> Result<AlphaEstimate> {
    if r == 0 {
        return Err(Error::InvalidParameter("r must be ≥ 1".into()));
    }
    check_geometric_grid(t_grid, 8)?;
    let series = t_grid
        .par_iter()
        .map(|&t| Ok(phi_many(view, &[r, r + 1], t, DIAG_TOL)?.iter().map(|c| c.value).collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?;
    let ratios: Vec<f64> = series.iter().map(|p| p[1] / p[0]).collect();
    let n = ratios.len();
    let mut last_q: Vec<f64> = ratios[n - n.div_ceil(4)..].to_vec();
    let c = median(&mut last_q);
    let half = &ratios[n / 2..];
    let (lo, hi) = half.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let oscillation = hi - lo;
    // the ratio only identifies an index when Φ_r itself keeps growing
    let growth = series[n - 1][0] / series[n / 2][0];
    let converged = oscillation <= ALPHA_CONVERGENCE_TOL && growth > 1.2 && c.is_finite();
    let rf = r as f64;
    Ok(AlphaEstimate {
        r,
        t_grid: t_grid.to_vec(),
        ratios,
        c,
        alpha: rf - c * (rf + 1.0),
        in_range: c >= (rf - 1.0) / (rf + 1.0) && c <= rf / (rf + 1.0),
        oscillation,
        converged,
    })
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "case", rename_all = "snake_case")]
pub enum LimitCase {
    Proper { alpha: f64 },
    SlowVariation,
    Index1,
}

impl LimitCase {
    pub fn from_alpha(alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidParameter(format!("index {alpha} not in [0,1]")));
        }
        Ok(if alpha == 0.0 {
            LimitCase::SlowVariation
        } else if alpha == 1.0 {
            LimitCase::Index1
        } else {
            LimitCase::Proper { alpha }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitCovariance {
    pub case: LimitCase,
    pub index_set: Vec<u32>,
    pub raw: Vec<Vec<f64>>,
    /// S_rs / √(S_rr S_ss); a decoupled r = 1 gets a unit diagonal.
    pub normalized: Vec<Vec<f64>>,
    pub decoupled: bool,
}

impl LimitCovariance {
    pub fn get(&self, r: u32, s: u32) -> Option<f64> {
        let i = self.index_set.iter().position(|&x| x == r)?;
        let j = self.index_set.iter().position(|&x| x == s)?;
        Some(self.normalized[i][j])
    }
}

fn proper_entry(alpha: f64, r: u32, s: u32) -> f64 {
    let (rf, sf) = (r as f64, s as f64);
    let lf = |k: u32| ln_factorial(k as u64).exp();
    if r == s {
        alpha / lf(r) * (gamma(rf - alpha) - gamma(2.0 * rf - alpha) / (lf(r) * 2f64.powf(2.0 * rf - alpha)))
    } else {
        -alpha * gamma(rf + sf - alpha) / (lf(r) * lf(s) * 2f64.powf(rf + sf - alpha))
    }
}

fn slow_entry(r: u32, s: u32) -> f64 {
    let n = (r + s) as u64;
    let b = binomial_exact(n, r as u64).expect("r + s ≤ 64") as f64;
    if r == s {
        1.0 / r as f64 - b / (r as f64 * 2f64.powi(2 * r as i32 + 1))
    } else {
        -b / (n as f64 * 2f64.powi(n as i32))
    }
}

/// Limiting covariance matrix S of the standardized counts.
pub fn limit_covariance(case: LimitCase, rs: &[u32]) -> Result<LimitCovariance> {
    crate::moments::check_index_set(rs)?;
    if rs.iter().any(|&r| 2 * r > 64) {
        return Err(Error::InvalidParameter("orders above 32 are not supported".into()));
    }
    let n = rs.len();
    let mut raw = vec![vec![0.0; n]; n];
    let mut decoupled = false;
    for i in 0..n {
        for j in 0..n {
            let (r, s) = (rs[i], rs[j]);
            raw[i][j] = match case {
                LimitCase::Proper { alpha } => {
                    if !(alpha > 0.0 && alpha < 1.0) {
                        return Err(Error::InvalidParameter(format!("proper case needs 0 < α < 1, got {alpha}")));
                    }
                    proper_entry(alpha, r, s)
                }
                LimitCase::SlowVariation => slow_entry(r, s),
                LimitCase::Index1 => {
                    if r == 1 || s == 1 {
                        decoupled = true;
                        0.0
                    } else {
                        proper_entry(1.0, r, s)
                    }
                }
            };
        }
    }
    let normalized = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        1.0
                    } else if raw[i][i] == 0.0 || raw[j][j] == 0.0 {
                        0.0
                    } else {
                        raw[i][j] / (raw[i][i] * raw[j][j]).sqrt()
                    }
                })
                .collect()
        })
        .collect();
    Ok(LimitCovariance {
        case,
        index_set: rs.to_vec(),
        raw,
        normalized,
        decoupled,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanVerdict {
    Converged,
    Oscillating,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairScan {
    pub r: u32,
    pub s: u32,
    /// Σ_rs(t) per grid point; `None` where a variance was degenerate.
    pub series: Vec<Option<f64>>,
    /// max − min over the last half of the grid.
    pub amplitude: f64,
    /// max |Σ_rs| over the whole grid; the verdict thresholds scale with it.
    pub peak: f64,
    /// max |Σ_rs| over the last half.
    pub late_peak: f64,
    /// Median over the last half.
    pub limit: f64,
    pub verdict: ScanVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SigmaScan {
    pub t_grid: Vec<f64>,
    pub pairs: Vec<PairScan>,
    /// Grid points where some variance fell below 1e-12.
    pub skipped: Vec<f64>,
    /// All pairs with 2 ≤ r < s converged.
    pub premise_plausible: bool,
}

impl SigmaScan {
    pub fn pair(&self, r: u32, s: u32) -> Option<&PairScan> {
        self.pairs.iter().find(|p| p.r == r && p.s == s)
    }

    /// CSV with columns t, r, s, sigma (skipped points omitted).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,r,s,sigma\n");
        for p in &self.pairs {
            for (t, v) in self.t_grid.iter().zip(&p.series) {
                if let Some(v) = v {
                    out.push_str(&format!("{t:e},{},{},{v:e}\n", p.r, p.s));
                }
            }
        }
        out
    }
}

/// Scanned pairs: 2 ≤ r < s with r + s ≤ 12, then (1, s) for s ≤ 5.
pub fn scan_pairs() -> Vec<(u32, u32)> {
    let mut v = Vec::new();
    for r in 2..12u32 {
        for s in r + 1..=12 - r {
            v.push((r, s));
        }
    }
    v.extend((2..=5).map(|s| (1, s)));
    v
}

pub const SCAN_CONVERGED: f64 = 0.01;
pub const SCAN_OSCILLATING: f64 = 0.1;

pub fn sigma_convergence_scan(view: &FrequencyView, t_grid: &[f64]) -> Result<SigmaScan> {
    check_geometric_grid(t_grid, 32)?;
    let pairs = scan_pairs();
    let orders: Vec<u32> = (1..=10).collect();
    let sums: Vec<u32> = (3..=12).collect();
    let rows: Vec<Result<Option<Vec<f64>>>> = t_grid
        .par_iter()
        .map(|&t| {
            let vars = variances(view, &orders, t, DIAG_TOL)?;
            if vars.iter().any(|v| v.value < 1e-12) {
                return Ok(None);
            }
            let doubled = phi_many(view, &sums, 2.0 * t, DIAG_TOL)?;
            Ok(Some(
                pairs
                    .iter()
                    .map(|&(r, s)| {
                        let c = -central_weight(r, s) * doubled[(r + s - 3) as usize].value;
                        c / (vars[r as usize - 1].value.sqrt() * vars[s as usize - 1].value.sqrt())
                    })
                    .collect(),
            ))
        })
        .collect();
    let mut table = Vec::with_capacity(rows.len());
    let mut skipped = Vec::new();
    for (row, &t) in rows.into_iter().zip(t_grid) {
        let row = row?;
        if row.is_none() {
            skipped.push(t);
        }
        table.push(row);
    }
    let n = t_grid.len();
    let scans: Vec<PairScan> = pairs
        .iter()
        .enumerate()
        .map(|(k, &(r, s))| {
            let series: Vec<Option<f64>> = table.iter().map(|row| row.as_ref().map(|v| v[k])).collect();
            let peak = series.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
            let mut late: Vec<f64> = series[n / 2..].iter().flatten().cloned().collect();
            let (lo, hi) = late.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            let amplitude = if late.is_empty() { f64::NAN } else { hi - lo };
            let late_peak = late.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let limit = median(&mut late);
            let scale = peak.min(1.0);
            let verdict = if !amplitude.is_finite() {
                ScanVerdict::Inconclusive
            } else if amplitude < SCAN_CONVERGED * scale {
                ScanVerdict::Converged
            } else if amplitude > SCAN_OSCILLATING * scale {
                ScanVerdict::Oscillating
            } else {
                ScanVerdict::Inconclusive
            };
            PairScan {
                r,
                s,
                series,
                amplitude,
                peak,
                late_peak,
                limit,
                verdict,
            }
        })
        .collect();
    let premise_plausible = scans
        .iter()
        .filter(|p| p.r >= 2)
        .all(|p| p.verdict == ScanVerdict::Converged);
    Ok(SigmaScan {
        t_grid: t_grid.to_vec(),
        pairs: scans,
        skipped,
        premise_plausible,
    })
}
