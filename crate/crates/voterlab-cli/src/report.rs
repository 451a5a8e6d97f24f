//! Run outputs: a JSON verdict summary plus CSV tables with deterministic
//! cell formatting.

use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{Map, Value};

const MAX_LISTED_FAILURES: usize = 32;

/// Verdict and headline numbers of one suite run, written as `report.json`.
#[derive(Debug, Serialize)]
pub struct Report {
    pub suite: String,
    pub config_hash: String,
    pub seed: u64,
    pub pass: bool,
    pub metrics: Map<String, Value>,
    pub warnings: Vec<String>,
    pub failures: Vec<String>,
    pub suppressed_failures: usize,
}

impl Report {
    pub fn new(suite: &str, config_hash: String, seed: u64) -> Self {
        Report {
            suite: suite.to_string(),
            config_hash,
            seed,
            pass: true,
            metrics: Map::new(),
            warnings: Vec::new(),
            failures: Vec::new(),
            suppressed_failures: 0,
        }
    }

    pub fn metric(&mut self, key: &str, value: impl Into<Value>) {
        self.metrics.insert(key.to_string(), value.into());
    }

    /// Record a hard assertion; a false condition fails the run and keeps
    /// the first few messages.
    pub fn require(&mut self, ok: bool, message: impl FnOnce() -> String) {
        if ok {
            return;
        }
        self.pass = false;
        if self.failures.len() < MAX_LISTED_FAILURES {
            self.failures.push(message());
        } else {
            self.suppressed_failures += 1;
        }
    }

    pub fn warn(&mut self, message: String) {
        self.warnings.push(message);
    }

    pub fn write(&self, out_dir: &Path) -> Result<()> {
        let path = out_dir.join("report.json");
        let mut text = serde_json::to_string_pretty(self).context("serializing the report")?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}

/// One CSV table, written as `<name>.csv` in the output directory.
pub struct Table {
    name: &'static str,
    header: &'static [&'static str],
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &'static str, header: &'static [&'static str]) -> Self {
        Table { name, header, rows: Vec::new() }
    }

    pub fn row(&mut self, cells: Vec<String>) {
        assert_eq!(cells.len(), self.header.len(), "row width in table {}", self.name);
        self.rows.push(cells);
    }

    pub fn write(&self, out_dir: &Path) -> Result<()> {
        let path = out_dir.join(format!("{}.csv", self.name));
        let mut writer = csv::Writer::from_path(&path)
            .with_context(|| format!("creating {}", path.display()))?;
        writer.write_record(self.header)?;
        for row in &self.rows {
            writer.write_record(row)?;
        }
        writer.flush().with_context(|| format!("writing {}", path.display()))
    }
}

/// Shortest round-trip decimal form; stable across runs and platforms.
pub fn cell(x: f64) -> String {
    x.to_string()
}
