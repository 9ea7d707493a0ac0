use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use occupancy::FrequencySpec;

use crate::ConfigError;

#[derive(Debug, Parser)]
#[command(name = "occupancy-lab", version, about = "Moments, regimes, bounds and simulations for the infinite occupancy scheme")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Φ_r and V_r over a t-grid.
    Moments(MomentsArgs),
    /// Regime classification from Φ_r on a grid.
    Classify(ClassifyArgs),
    /// Regular-variation index from Φ_{r+1}/Φ_r.
    Alpha(AlphaArgs),
    /// Limiting correlation matrix for a given index.
    LimitCov(LimitCovArgs),
    /// Convergence scan of Σ_rs(t) over the fixed pair set.
    ScanSigma(ScanArgs),
    /// Monte Carlo runs with normality diagnostics.
    Simulate(SimulateArgs),
    /// Fixed-n versus Poissonized total-variation bound.
    Depoisson(DepoissonArgs),
    /// Series for one of the named examples.
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct Output {
    /// Write here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Args)]
pub struct MomentsArgs {
    /// Frequency model: JSON file, or inline JSON object.
    #[arg(long)]
    pub spec: String,
    #[arg(long, default_value = "1")]
    pub r: String,
    /// start:factor:points
    #[arg(long)]
    pub t_grid: String,
    #[arg(long, default_value_t = occupancy::moments::DEFAULT_TOL)]
    pub tol: f64,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub spec: String,
    /// Orders 1..=max of this list are examined.
    #[arg(long, default_value = "1,2,3,4")]
    pub r: String,
    #[arg(long)]
    pub t_grid: Option<String>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct AlphaArgs {
    #[arg(long)]
    pub spec: String,
    #[arg(long, default_value = "1")]
    pub r: String,
    #[arg(long)]
    pub t_grid: Option<String>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct LimitCovArgs {
    /// Index in [0, 1]; 0 and 1 select the boundary cases.
    #[arg(long)]
    pub alpha: f64,
    #[arg(long = "R", default_value = "1,2,3")]
    pub big_r: String,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    #[arg(long)]
    pub spec: String,
    #[arg(long)]
    pub t_grid: Option<String>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub spec: String,
    #[arg(long = "R", default_value = "1,2,3")]
    pub big_r: String,
    /// Fixed-n sizes.
    #[arg(long, conflicts_with = "t")]
    pub n: Option<String>,
    /// Poissonized sizes.
    #[arg(long)]
    pub t: Option<String>,
    #[arg(long, default_value_t = 10_000)]
    pub reps: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.02)]
    pub ks_threshold: f64,
    #[arg(long, default_value_t = 0.03)]
    pub cov_threshold: f64,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct DepoissonArgs {
    #[arg(long)]
    pub spec: String,
    #[arg(long)]
    pub n: String,
    /// Number of leading counts compared.
    #[arg(long, default_value_t = 3)]
    pub m: u32,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Example {
    KarlinEx1,
    BgyEx2,
    FactorialEx3,
    Genex,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    #[arg(value_enum)]
    pub example: Example,
    #[arg(long, default_value_t = 0.5)]
    pub beta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 2)]
    pub r: u32,
    #[arg(long)]
    pub t_grid: Option<String>,
    #[arg(long, default_value_t = occupancy::moments::DEFAULT_TOL)]
    pub tol: f64,
    #[command(flatten)]
    pub output: Output,
}

/// Geometric grid description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSpec {
    pub start: f64,
    pub factor: f64,
    pub points: usize,
}

impl GridSpec {
    pub fn points(&self) -> Vec<f64> {
        occupancy::moments::geometric_grid(self.start, self.factor, self.points)
    }
}

pub fn parse_grid(s: &str) -> Result<GridSpec, ConfigError> {
    let bad = || ConfigError(format!("t-grid '{s}' must be start:factor:points"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let start: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let factor: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let points: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if !(start > 0.0 && start.is_finite()) {
        return Err(ConfigError(format!("t-grid start {start} must be positive")));
    }
    if !(factor > 1.0 && factor.is_finite()) {
        return Err(ConfigError(format!("t-grid factor {factor} must exceed 1")));
    }
    if points == 0 {
        return Err(ConfigError("t-grid needs at least one point".into()));
    }
    let g = GridSpec { start, factor, points };
    if !g.points().last().is_some_and(|t| t.is_finite()) {
        return Err(ConfigError(format!("t-grid '{s}' leaves the double range")));
    }
    Ok(g)
}

/// Comma list of positive integers; `a-b` expands to a range.
pub fn parse_orders(s: &str) -> Result<Vec<u32>, ConfigError> {
    let mut out = Vec::new();
    for item in s.split(',').map(str::trim).filter(|x| !x.is_empty()) {
        let bad = || ConfigError(format!("bad order '{item}' in '{s}'"));
        if let Some((a, b)) = item.split_once('-') {
            let a: u32 = a.trim().parse().map_err(|_| bad())?;
            let b: u32 = b.trim().parse().map_err(|_| bad())?;
            if a > b {
                return Err(bad());
            }
            out.extend(a..=b);
        } else {
            out.push(item.parse().map_err(|_| bad())?);
        }
    }
    if out.is_empty() {
        return Err(ConfigError(format!("empty order list '{s}'")));
    }
    if out.contains(&0) {
        return Err(ConfigError("orders start at 1".into()));
    }
    Ok(out)
}

/// Comma list of sizes; scientific notation allowed.
pub fn parse_sizes(s: &str) -> Result<Vec<f64>, ConfigError> {
    let v: Vec<f64> = s
        .split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| x.parse::<f64>().map_err(|_| ConfigError(format!("bad size '{x}'"))))
        .collect::<Result<_, _>>()?;
    if v.is_empty() {
        return Err(ConfigError(format!("empty size list '{s}'")));
    }
    if let Some(x) = v.iter().find(|x| !(**x > 0.0 && x.is_finite())) {
        return Err(ConfigError(format!("size {x} must be positive and finite")));
    }
    Ok(v)
}

pub fn parse_counts(s: &str) -> Result<Vec<u64>, ConfigError> {
    parse_sizes(s)?
        .into_iter()
        .map(|x| {
            if x.fract() == 0.0 && x < 2f64.powi(63) {
                Ok(x as u64)
            } else {
                Err(ConfigError(format!("ball count {x} is not an integer")))
            }
        })
        .collect()
}

pub fn load_spec(arg: &str) -> Result<FrequencySpec, ConfigError> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        std::fs::read_to_string(arg).map_err(|e| ConfigError(format!("cannot read spec file {arg}: {e}")))?
    };
    serde_json::from_str(&text).map_err(|e| ConfigError(format!("invalid frequency spec: {e}")))
}

pub fn check_out_path(out: &Option<PathBuf>) -> Result<(), ConfigError> {
    if let Some(p) = out {
        let parent = p.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
        if !parent.is_dir() {
            return Err(ConfigError(format!("output directory {} does not exist", parent.display())));
        }
        if p.is_dir() {
            return Err(ConfigError(format!("output path {} is a directory", p.display())));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        let g = parse_grid("1:2:20").unwrap();
        assert_eq!(g.points().len(), 20);
        assert_eq!(g.points()[19], 524288.0);
        assert!(parse_grid("1:1:5").is_err());
        assert!(parse_grid("0:2:5").is_err());
        assert!(parse_grid("1:2").is_err());
        assert!(parse_grid("1:2:2000").is_err());
    }

    #[test]
    fn order_lists() {
        assert_eq!(parse_orders("1,2, 5").unwrap(), vec![1, 2, 5]);
        assert_eq!(parse_orders("1-3,6").unwrap(), vec![1, 2, 3, 6]);
        assert!(parse_orders("0,1").is_err());
        assert!(parse_orders("").is_err());
    }

    #[test]
    fn counts() {
        assert_eq!(parse_counts("1e4,100").unwrap(), vec![10_000, 100]);
        assert!(parse_counts("2.5").is_err());
    }
}
