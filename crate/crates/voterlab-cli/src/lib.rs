//! Experiment orchestration over the voterlab library: plain-text configs,
//! seeded replica farming for the five suites, and CSV/JSON reporting.

pub mod config;
pub mod report;
pub mod suites;

use std::path::Path;

use anyhow::{bail, Context, Result};

use config::SuiteName;

/// Parse the config, run the requested suite, write `report.json` and the
/// CSV tables, and return whether every hard assertion passed.
pub fn run_suite(
    suite: SuiteName,
    config_path: &Path,
    seed_override: Option<u64>,
    out_dir: &Path,
    threads: usize,
    dump_log: bool,
) -> Result<bool> {
    let config = config::parse_config(config_path)?;
    if config.suite != suite {
        bail!(
            "config declares suite `{}` but `{}` was requested",
            config.suite.as_str(),
            suite.as_str()
        );
    }
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;
    let opts = suites::RunOptions {
        seed: seed_override.unwrap_or(config.seed),
        dump_log,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .context("building the worker pool")?;
    let report = pool.install(|| suites::run(&config, &opts, out_dir))?;
    report.write(out_dir)?;
    println!(
        "{}: {} ({})",
        report.suite,
        if report.pass { "PASS" } else { "FAIL" },
        out_dir.display()
    );
    Ok(report.pass)
}
