//! occupancy-lab: batch front end to the `occupancy` library.
//!
//! Every command prints CSV (with a `#` preamble holding the resolved config
//! and versions) or a JSON document of the form
//! `{tool, version, library_version, command, config, result}`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration error.

use std::process::ExitCode;

use clap::Parser;

mod args;
mod commands;
mod output;

use args::{check_out_path, Cli, Command, Format};

/// Bad input from the user: exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<occupancy::Error>() {
        Some(
            occupancy::Error::InvalidParameter(_)
            | occupancy::Error::GridTooShort { .. }
            | occupancy::Error::DimensionMismatch(_)
            | occupancy::Error::Subprobability,
        ) => 2,
        _ => 1,
    }
}

fn init_threads() -> Result<(), ConfigError> {
    let Ok(v) = std::env::var("OCCUPANCY_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| ConfigError(format!("OCCUPANCY_THREADS='{v}' is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| ConfigError(e.to_string()))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    init_threads()?;
    let (out, format, default_format) = match &cli.command {
        Command::Moments(a) => (&a.output.out, a.output.format, Format::Csv),
        Command::Classify(a) => (&a.output.out, a.output.format, Format::Json),
        Command::Alpha(a) => (&a.output.out, a.output.format, Format::Json),
        Command::LimitCov(a) => (&a.output.out, a.output.format, Format::Csv),
        Command::ScanSigma(a) => (&a.output.out, a.output.format, Format::Csv),
        Command::Simulate(a) => (&a.output.out, a.output.format, Format::Json),
        Command::Depoisson(a) => (&a.output.out, a.output.format, Format::Csv),
        Command::Reproduce(a) => (&a.output.out, a.output.format, Format::Json),
    };
    check_out_path(out)?;
    let report = match &cli.command {
        Command::Moments(a) => commands::moments(a),
        Command::Classify(a) => commands::classify(a),
        Command::Alpha(a) => commands::alpha(a),
        Command::LimitCov(a) => commands::limit_cov(a),
        Command::ScanSigma(a) => commands::scan_sigma(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Depoisson(a) => commands::depoisson(a),
        Command::Reproduce(a) => commands::reproduce(a),
    }?;
    output::write(out, &report.render(format.unwrap_or(default_format))?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("occupancy-lab: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
