use anyhow::Result;
use serde::Serialize;
use serde_json::json;

use occupancy::asymptotics::{
    classify_regime, estimate_alpha, limit_covariance, sigma_convergence_scan, LimitCase, RegimeReport, RegimeThresholds,
    SigmaScan,
};
use occupancy::depoisson::tv_bound;
use occupancy::gaussian::{normality_diagnostics, NormalityReport, NormalityThresholds};
use occupancy::moments::{corr_matrix, moment_table, phi, CovMatrix, DEFAULT_TOL};
use occupancy::sampling::{monte_carlo, SimConfig, SimResult};
use occupancy::{BlockRule, Error, FrequencySpec, FrequencyView, Scheme};

use crate::args::*;
use crate::output::{f, Report};
use crate::ConfigError;

fn build_view(spec: FrequencySpec) -> Result<FrequencyView, ConfigError> {
    FrequencyView::new(spec).map_err(|e| ConfigError(e.to_string()))
}

/// Grid used when none is given: block families need the whole double range
/// to show their oscillations.
fn default_grid(view: &FrequencyView, other: GridSpec) -> GridSpec {
    if view.is_block_family() {
        GridSpec {
            start: 1.0,
            factor: 2.0,
            points: 1023,
        }
    } else {
        other
    }
}

fn grid_or(view: &FrequencyView, arg: &Option<String>, other: GridSpec) -> Result<GridSpec, ConfigError> {
    match arg {
        Some(s) => parse_grid(s),
        None => Ok(default_grid(view, other)),
    }
}

pub fn moments(a: &MomentsArgs) -> Result<Report> {
    let spec = load_spec(&a.spec)?;
    let rs = parse_orders(&a.r)?;
    let grid = parse_grid(&a.t_grid)?;
    if !(a.tol > 0.0) {
        return Err(ConfigError("tolerance must be positive".into()).into());
    }
    let view = build_view(spec.clone())?;
    let config = json!({ "spec": spec, "r": rs, "t_grid": grid, "tol": a.tol });
    let table = moment_table(&view, &rs, &grid.points(), a.tol, rs.len() > 1)?;
    let mut rep = Report::new("moments", config, &table, "t,r,phi,var,cert")?;
    rep.csv_rows = table
        .entries
        .iter()
        .map(|e| format!("{},{},{},{},{}", f(e.t), e.r, f(e.phi), f(e.var), f(e.cert)))
        .collect();
    Ok(rep)
}

pub fn classify(a: &ClassifyArgs) -> Result<Report> {
    let spec = load_spec(&a.spec)?;
    let r_max = *parse_orders(&a.r)?.iter().max().unwrap();
    let view = build_view(spec.clone())?;
    let grid = grid_or(
        &view,
        &a.t_grid,
        GridSpec {
            start: 1.0,
            factor: 2.0,
            points: 44,
        },
    )?;
    let config = json!({ "spec": spec, "r_max": r_max, "t_grid": grid });
    regime_report("classify", config, &view, r_max, grid)
}

fn regime_report(command: &'static str, config: serde_json::Value, view: &FrequencyView, r_max: u32, grid: GridSpec) -> Result<Report> {
    let report: RegimeReport = classify_regime(view, r_max, &grid.points(), RegimeThresholds::default())?;
    let mut rep = Report::new(command, config, &report, "t,r,phi")?;
    rep.notes.push(format!("verdict: {}", serde_json::to_string(&report.verdict)?));
    for (t, row) in report.t_grid.iter().zip(&report.phi) {
        for (k, v) in row.iter().enumerate() {
            rep.csv_rows.push(format!("{},{},{}", f(*t), k + 1, f(*v)));
        }
    }
    Ok(rep)
}

pub fn alpha(a: &AlphaArgs) -> Result<Report> {
    let spec = load_spec(&a.spec)?;
    let rs = parse_orders(&a.r)?;
    let view = build_view(spec.clone())?;
    let grid = grid_or(
        &view,
        &a.t_grid,
        GridSpec {
            start: 10.0,
            factor: 10f64.powf(0.25),
            points: 37,
        },
    )?;
    let config = json!({ "spec": spec, "r": rs, "t_grid": grid });
    let points = grid.points();
    let estimates = rs
        .iter()
        .map(|&r| estimate_alpha(&view, r, &points))
        .collect::<occupancy::Result<Vec<_>>>()?;
    let mut rep = Report::new("alpha", config, &estimates, "r,alpha,c,in_range,oscillation,converged")?;
    rep.csv_rows = estimates
        .iter()
        .map(|e| format!("{},{},{},{},{},{}", e.r, f(e.alpha), f(e.c), e.in_range, f(e.oscillation), e.converged))
        .collect();
    Ok(rep)
}

pub fn limit_cov(a: &LimitCovArgs) -> Result<Report> {
    let rs = parse_orders(&a.big_r)?;
    let case = LimitCase::from_alpha(a.alpha).map_err(|e| ConfigError(e.to_string()))?;
    let config = json!({ "alpha": a.alpha, "R": rs });
    let lc = limit_covariance(case, &rs)?;
    let mut rep = Report::new("limit-cov", config, &lc, "r,s,raw,normalized")?;
    for (i, &r) in rs.iter().enumerate() {
        for (j, &s) in rs.iter().enumerate() {
            rep.csv_rows.push(format!("{r},{s},{},{}", f(lc.raw[i][j]), f(lc.normalized[i][j])));
        }
    }
    Ok(rep)
}

pub fn scan_sigma(a: &ScanArgs) -> Result<Report> {
    let spec = load_spec(&a.spec)?;
    let view = build_view(spec.clone())?;
    let grid = grid_or(
        &view,
        &a.t_grid,
        GridSpec {
            start: 256.0,
            factor: 2.0,
            points: 33,
        },
    )?;
    let config = json!({ "spec": spec, "t_grid": grid });
    let scan = sigma_convergence_scan(&view, &grid.points())?;
    scan_report("scan-sigma", config, scan, |_| true)
}

fn scan_report(command: &'static str, config: serde_json::Value, mut scan: SigmaScan, keep: impl Fn(&(u32, u32)) -> bool) -> Result<Report> {
    scan.pairs.retain(|p| keep(&(p.r, p.s)));
    let mut rep = Report::new(command, config, &scan, "t,r,s,sigma")?;
    for p in &scan.pairs {
        rep.notes.push(format!(
            "pair ({},{}): {} limit {} amplitude {}",
            p.r,
            p.s,
            serde_json::to_string(&p.verdict)?.trim_matches('"'),
            f(p.limit),
            f(p.amplitude)
        ));
    }
    for (k, t) in scan.t_grid.iter().enumerate() {
        for p in &scan.pairs {
            if let Some(v) = p.series[k] {
                rep.csv_rows.push(format!("{},{},{},{}", f(*t), p.r, p.s, f(v)));
            }
        }
    }
    Ok(rep)
}

#[derive(Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
enum SimOutcome {
    Ok {
        simulation: Box<SimResult>,
        target: CovMatrix,
        normality: NormalityReport,
    },
    DegenerateVariance {
        #[serde(flatten)]
        scheme: Scheme,
        r: u32,
        value: f64,
    },
}

pub fn simulate(a: &SimulateArgs) -> Result<Report> {
    let spec = load_spec(&a.spec)?;
    let rs = parse_orders(&a.big_r)?;
    occupancy::moments::check_index_set(&rs).map_err(|e| ConfigError(e.to_string()))?;
    let schemes: Vec<Scheme> = match (&a.n, &a.t) {
        (Some(n), None) => parse_counts(n)?.into_iter().map(|n| Scheme::FixedN { n }).collect(),
        (None, Some(t)) => parse_sizes(t)?.into_iter().map(|t| Scheme::Poissonized { t }).collect(),
        _ => return Err(ConfigError("give exactly one of --n (fixed) or --t (Poissonized)".into()).into()),
    };
    if a.reps < 2 {
        return Err(ConfigError("need at least two replicates".into()).into());
    }
    let view = build_view(spec.clone())?;
    if view.is_subprobability() && schemes.iter().any(|s| matches!(s, Scheme::FixedN { .. })) {
        return Err(ConfigError("frequencies sum to less than one; use --t".into()).into());
    }
    let thresholds = NormalityThresholds {
        ks: a.ks_threshold,
        cov: a.cov_threshold,
    };
    let config = json!({
        "spec": spec, "R": rs, "schemes": schemes, "reps": a.reps, "seed": a.seed, "thresholds": thresholds,
    });
    let mut outcomes = Vec::new();
    for &scheme in &schemes {
        let mut cfg = SimConfig::new(scheme, a.reps, a.seed, rs.clone());
        cfg.r_cap = cfg.r_cap.max(*rs.last().unwrap());
        let sim = match monte_carlo(&view, &cfg) {
            Ok(s) => s,
            Err(Error::DegenerateVariance { r, value }) => {
                outcomes.push(SimOutcome::DegenerateVariance { scheme, r, value });
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let target = corr_matrix(&view, &rs, scheme.size(), DEFAULT_TOL)?;
        let normality = normality_diagnostics(&sim, &target, thresholds)?;
        let mut sim = sim;
        sim.standardized = None;
        outcomes.push(SimOutcome::Ok {
            simulation: Box::new(sim),
            target,
            normality,
        });
    }
    let mut rep = Report::new("simulate", config, &outcomes, "scheme,size,r,s,target,empirical,ks")?;
    for o in &outcomes {
        match o {
            SimOutcome::Ok { target, normality, simulation } => {
                let (name, size) = scheme_cols(simulation.config.scheme);
                rep.notes.push(format!("{name} {size}: pass {}", normality.pass));
                for (i, &r) in rs.iter().enumerate() {
                    for (j, &s) in rs.iter().enumerate() {
                        let ks = if i == j { f(normality.ks[i]) } else { String::new() };
                        rep.csv_rows.push(format!(
                            "{name},{size},{r},{s},{},{},{ks}",
                            f(target.matrix[i][j]),
                            f(normality.empirical_cov[i][j])
                        ));
                    }
                }
            }
            SimOutcome::DegenerateVariance { scheme, r, value } => {
                let (name, size) = scheme_cols(*scheme);
                rep.notes.push(format!("{name} {size}: degenerate variance at r = {r} (V = {})", f(*value)));
            }
        }
    }
    Ok(rep)
}

fn scheme_cols(s: Scheme) -> (&'static str, String) {
    match s {
        Scheme::FixedN { n } => ("fixed_n", n.to_string()),
        Scheme::Poissonized { t } => ("poissonized", f(t)),
    }
}

pub fn depoisson(a: &DepoissonArgs) -> Result<Report> {
    let spec = load_spec(&a.spec)?;
    let ns = parse_counts(&a.n)?;
    if a.m == 0 {
        return Err(ConfigError("m must be at least 1".into()).into());
    }
    let view = build_view(spec.clone())?;
    let config = json!({ "spec": spec, "n": ns, "m": a.m });
    let bounds = ns
        .iter()
        .map(|&n| tv_bound(&view, n, a.m))
        .collect::<occupancy::Result<Vec<_>>>()?;
    let mut rep = Report::new("depoisson", config, &bounds, "n,m,k,capped,p_k,pi_k,bound,applicable")?;
    rep.csv_rows = bounds
        .iter()
        .map(|b| {
            format!(
                "{},{},{},{},{},{},{},{}",
                b.n,
                b.m,
                b.k,
                b.capped,
                f(b.p_k),
                f(b.pi_k),
                f(b.bound),
                b.applicable
            )
        })
        .collect();
    Ok(rep)
}

/// One block of the generalized example: Φ at the block scale 1/q_l and at
/// the gap point t'_l = 2 q_l^{-1} log m_{l+1}.
#[derive(Debug, Serialize)]
struct GenexRow {
    block: u32,
    log2_m: f64,
    q: f64,
    t_scale: f64,
    t_gap: f64,
    phi_r_scale: Option<f64>,
    phi_r_gap: Option<f64>,
    phi_1_scale: Option<f64>,
    phi_1_gap: Option<f64>,
    representable: bool,
}

#[derive(Debug, Serialize)]
struct GenexSeries {
    r: u32,
    beta: f64,
    alpha: f64,
    /// β(1 + α)
    boundary_product: f64,
    rows: Vec<GenexRow>,
    /// Block indices of the last three representable rows.
    largest_representable: Vec<u32>,
}

fn genex(a: &ReproduceArgs) -> Result<Report> {
    if a.r == 0 {
        return Err(ConfigError("r must be at least 1".into()).into());
    }
    let spec = FrequencySpec::Blocks {
        rule: BlockRule::GenEx {
            beta: a.beta,
            alpha: a.alpha,
        },
    };
    let view = build_view(spec.clone())?;
    let blocks = view.blocks().expect("block family").to_vec();
    let at = |r: u32, t: f64| -> Result<Option<f64>> {
        if !t.is_finite() {
            return Ok(None);
        }
        match phi(&view, r, t, a.tol) {
            Ok(c) => Ok(Some(c.value)),
            Err(Error::Overflow) => Ok(None),
            Err(e) => Err(e.into()),
        }
    };
    let mut rows = Vec::new();
    for w in blocks.windows(2) {
        let (cur, next) = (w[0], w[1]);
        let t_scale = (-cur.ln_q).exp();
        let t_gap = 2.0 * t_scale * next.ln_m;
        let phi_r_scale = at(a.r, t_scale)?;
        let phi_r_gap = at(a.r, t_gap)?;
        rows.push(GenexRow {
            block: cur.index,
            log2_m: cur.log2_m(),
            q: cur.q(),
            t_scale,
            t_gap,
            representable: phi_r_scale.is_some() && phi_r_gap.is_some(),
            phi_r_scale,
            phi_r_gap,
            phi_1_scale: at(1, t_scale)?,
            phi_1_gap: at(1, t_gap)?,
        });
    }
    let rep_idx: Vec<u32> = rows.iter().filter(|r| r.representable).map(|r| r.block).collect();
    let largest_representable = rep_idx[rep_idx.len().saturating_sub(3)..].to_vec();
    let series = GenexSeries {
        r: a.r,
        beta: a.beta,
        alpha: a.alpha,
        boundary_product: a.beta * (1.0 + a.alpha),
        rows,
        largest_representable,
    };
    let config = json!({ "example": Example::Genex, "spec": spec, "r": a.r, "tol": a.tol });
    let mut rep = Report::new(
        "reproduce",
        config,
        &series,
        "block,log2_m,q,t_scale,t_gap,phi_r_scale,phi_r_gap,phi_1_scale,phi_1_gap",
    )?;
    let opt = |x: Option<f64>| x.map(f).unwrap_or_default();
    rep.csv_rows = series
        .rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{},{},{},{}",
                r.block,
                f(r.log2_m),
                f(r.q),
                f(r.t_scale),
                f(r.t_gap),
                opt(r.phi_r_scale),
                opt(r.phi_r_gap),
                opt(r.phi_1_scale),
                opt(r.phi_1_gap)
            )
        })
        .collect();
    Ok(rep)
}

pub fn reproduce(a: &ReproduceArgs) -> Result<Report> {
    let rule = match a.example {
        Example::Genex => return genex(a),
        Example::KarlinEx1 => BlockRule::KarlinEx1,
        Example::BgyEx2 => BlockRule::BgyEx2,
        Example::FactorialEx3 => BlockRule::Factorial,
    };
    let spec = FrequencySpec::Blocks { rule };
    let view = build_view(spec.clone())?;
    let grid = grid_or(
        &view,
        &a.t_grid,
        GridSpec {
            start: 1.0,
            factor: 2.0,
            points: 1023,
        },
    )?;
    let config = json!({ "example": a.example, "spec": spec, "t_grid": grid });
    match a.example {
        Example::FactorialEx3 => {
            let scan = sigma_convergence_scan(&view, &grid.points())?;
            scan_report("reproduce", config, scan, |&(r, _)| r == 1)
        }
        // Φ_1 and Φ_2 are enough to show both oscillation examples
        _ => regime_report("reproduce", config, &view, 2, grid),
    }
}
