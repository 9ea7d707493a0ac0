use std::io::Write;
use std::path::PathBuf;

use anyhow::Context;
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::Format;

/// A finished command: resolved config, machine-readable result and the
/// CSV rendering of the same data.
pub struct Report {
    pub command: &'static str,
    pub config: Value,
    pub result: Value,
    pub csv_header: &'static str,
    pub csv_rows: Vec<String>,
    /// Extra `# key: value` lines for the CSV preamble.
    pub notes: Vec<String>,
}

impl Report {
    pub fn new(command: &'static str, config: Value, result: impl Serialize, csv_header: &'static str) -> anyhow::Result<Self> {
        Ok(Self {
            command,
            config,
            result: serde_json::to_value(result)?,
            csv_header,
            csv_rows: Vec::new(),
            notes: Vec::new(),
        })
    }

    pub fn render(&self, format: Format) -> anyhow::Result<String> {
        match format {
            Format::Json => {
                let doc = json!({
                    "tool": "occupancy-lab",
                    "version": env!("CARGO_PKG_VERSION"),
                    "library_version": occupancy::VERSION,
                    "command": self.command,
                    "config": self.config,
                    "result": self.result,
                });
                let mut s = serde_json::to_string_pretty(&doc)?;
                s.push('\n');
                Ok(s)
            }
            Format::Csv => {
                let mut s = format!(
                    "# occupancy-lab {} (occupancy {})\n# command: {}\n# config: {}\n",
                    env!("CARGO_PKG_VERSION"),
                    occupancy::VERSION,
                    self.command,
                    serde_json::to_string(&self.config)?
                );
                for n in &self.notes {
                    s.push_str(&format!("# {n}\n"));
                }
                s.push_str(self.csv_header);
                s.push('\n');
                for row in &self.csv_rows {
                    s.push_str(row);
                    s.push('\n');
                }
                Ok(s)
            }
        }
    }
}

pub fn write(out: &Option<PathBuf>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

/// Shortest round-trip scientific notation.
pub fn f(x: f64) -> String {
    format!("{x:e}")
}
