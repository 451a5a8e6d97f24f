//! The five experiment suites and their shared sampling helpers.

pub mod atomic;
pub mod convergence;
pub mod duality;
pub mod generators;
pub mod meeting;

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use anyhow::{Context, Result};
use rand::Rng;
use voterlab::fvref::{fv_sample_types, FvSpec};
use voterlab::graphical::EventLog;
use voterlab::stats::MeanSe;
use voterlab::Configuration;

use crate::config::{ExperimentConfig, SuiteName};
use crate::report::Report;

pub struct RunOptions {
    pub seed: u64,
    pub dump_log: bool,
}

pub fn run(config: &ExperimentConfig, opts: &RunOptions, out_dir: &Path) -> Result<Report> {
    match config.suite {
        SuiteName::Duality => duality::run(config, opts, out_dir),
        SuiteName::Generators => generators::run(config, opts, out_dir),
        SuiteName::Meeting => meeting::run(config, opts, out_dir),
        SuiteName::Convergence => convergence::run(config, opts, out_dir),
        SuiteName::Atomic => atomic::run(config, opts, out_dir),
    }
}

pub(crate) fn report_for(config: &ExperimentConfig, opts: &RunOptions) -> Report {
    Report::new(config.suite.as_str(), config.hash(), opts.seed)
}

/// Start with every site carrying its own type.
pub(crate) fn all_distinct_start(n: usize) -> Configuration {
    (0..n as u32).collect()
}

/// Start cycling through the `m` types along the site order.
pub(crate) fn cyclic_start(n: usize, m: usize) -> Configuration {
    (0..n).map(|x| (x % m) as u32).collect()
}

/// Entropy of the equal-weight empirical measure of a type sample.
pub(crate) fn entropy_of_types(types: &[u64]) -> f64 {
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for &tau in types {
        *counts.entry(tau).or_insert(0) += 1;
    }
    let n = types.len() as f64;
    counts
        .values()
        .map(|&c| {
            let a = c as f64 / n;
            -a * a.ln()
        })
        .sum()
}

/// Mean and standard error of the sampled-genealogy entropy at resolution
/// `individuals`.
pub(crate) fn fv_entropy_estimate<R: Rng + ?Sized>(
    spec: &FvSpec,
    individuals: usize,
    t: f64,
    replicas: usize,
    rng: &mut R,
) -> Result<MeanSe> {
    let mut samples = Vec::with_capacity(replicas);
    for _ in 0..replicas {
        let types = fv_sample_types(spec, individuals, t, rng)?;
        samples.push(entropy_of_types(&types));
    }
    Ok(MeanSe::from_samples(&samples))
}

/// Middle order statistic; the lower of the two for even counts.
pub(crate) fn median_usize(values: &mut [usize]) -> usize {
    values.sort_unstable();
    values[(values.len().saturating_sub(1)) / 2]
}

/// One-sample Kolmogorov-Smirnov distance to the unit-rate exponential law.
pub(crate) fn ks_to_unit_exponential(samples: &mut [f64]) -> f64 {
    samples.sort_unstable_by(|a, b| a.total_cmp(b));
    let n = samples.len() as f64;
    let mut sup = 0.0f64;
    for (i, &x) in samples.iter().enumerate() {
        let cdf = 1.0 - (-x).exp();
        sup = sup.max((cdf - i as f64 / n).abs());
        sup = sup.max(((i + 1) as f64 / n - cdf).abs());
    }
    sup
}

pub(crate) fn write_sample_log(log: &EventLog, out_dir: &Path) -> Result<()> {
    let path = out_dir.join("sample_log.bin");
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    log.write_binary(file)
        .with_context(|| format!("writing {}", path.display()))
}
