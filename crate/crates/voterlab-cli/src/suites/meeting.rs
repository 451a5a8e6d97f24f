//! Meeting-time scales per size: exact and Monte-Carlo scale estimates,
//! rescaled tail profiles against the exponential limit, and block-count
//! hitting laws against the limit genealogy.

use std::path::Path;

use anyhow::Result;
use rayon::prelude::*;

use voterlab::coalescent::{
    block_hitting_times, gamma_exact, gamma_mc, kingman_tail_sample, meeting_tail_profile,
    meeting_time_with, CAP_GAMMA_MULTIPLE, KINGMAN_TRUNCATION_TOL,
};
use voterlab::rng::{domain, substream};
use voterlab::stats::ks_two_sample;

use super::{ks_to_unit_exponential, report_for, RunOptions};
use crate::config::ExperimentConfig;
use crate::report::{cell, Report, Table};

/// Sizes small enough for the direct Monte-Carlo cross-check.
const MC_CROSS_CHECK_MAX: usize = 64;
/// Slack on the requirement that the rescaled law approaches its limit.
const KS_DECREASE_SLACK: f64 = 0.002;
const BLOCK_LEVELS: [usize; 3] = [1, 2, 5];
const CENSOR_WARN_FRACTION: f64 = 0.01;

pub fn run(config: &ExperimentConfig, opts: &RunOptions, out_dir: &Path) -> Result<Report> {
    let mut report = report_for(config, opts);
    let mut scale = Table::new(
        "meeting_scale",
        &["size", "gamma", "mc_mean", "mc_se", "ks_exponential", "t_mix", "mixing_ratio"],
    );
    let mut tail = Table::new(
        "meeting_tail",
        &[
            "size", "t", "tail", "tail_se", "limit_tail", "integral", "integral_se",
            "limit_integral",
        ],
    );
    let mut blocks = Table::new(
        "meeting_blocks",
        &["size", "level", "ks", "censored_fraction", "replicas"],
    );

    let mut law_ks = Vec::new();
    for (slot, &n) in config.sizes.iter().enumerate() {
        let kernel = config.kernel.build_salted(n, 0)?;
        let gamma = gamma_exact(&kernel)?;
        let mixing = kernel.mixing_report(gamma)?;

        let mc = if n <= MC_CROSS_CHECK_MAX {
            let mut rng = substream(opts.seed, domain::REPLICA, slot as u64);
            let est = gamma_mc(&kernel, config.replicas.max(1000), &mut rng)?;
            report.require((est.mean - gamma).abs() <= 4.0 * est.se, || {
                format!(
                    "size {n}: Monte-Carlo scale {} is {} standard errors from the exact {gamma}",
                    est.mean,
                    ((est.mean - gamma) / est.se).abs()
                )
            });
            Some(est)
        } else {
            None
        };

        // rescaled law of one stationary pair's meeting time
        let sampler = kernel.row_sampler();
        let pair_law = kernel.pair_sampler();
        let mut rng = substream(opts.seed, domain::WALK, slot as u64);
        let mut rescaled: Vec<f64> = (0..config.replicas)
            .map(|_| {
                let (x, y) = pair_law.sample(&mut rng);
                meeting_time_with(&sampler, x, y, &mut rng, f64::INFINITY)
                    .hit()
                    .expect("uncapped meeting run")
                    / gamma
            })
            .collect();
        let ks_exp = ks_to_unit_exponential(&mut rescaled);
        law_ks.push(ks_exp);

        scale.row(vec![
            n.to_string(),
            cell(gamma),
            mc.map_or_else(|| "na".into(), |e| cell(e.mean)),
            mc.map_or_else(|| "na".into(), |e| cell(e.se)),
            cell(ks_exp),
            cell(mixing.t_mix),
            cell(mixing.mixing_ratio),
        ]);

        let positive = config.positive_times();
        if !positive.is_empty() {
            let mut rng = substream(opts.seed, domain::REPLICA, 1 << 32 | slot as u64);
            let rows = meeting_tail_profile(&kernel, gamma, &positive, config.replicas.max(2), &mut rng)?;
            for row in rows {
                tail.row(vec![
                    n.to_string(),
                    cell(row.t),
                    cell(row.tail.mean),
                    cell(row.tail.se),
                    cell((-row.t).exp()),
                    cell(row.integral.mean),
                    cell(row.integral.se),
                    cell(1.0 - (-row.t).exp()),
                ]);
            }
        }

        let levels: Vec<usize> = BLOCK_LEVELS.iter().copied().filter(|&j| j < n).collect();
        if !levels.is_empty() {
            let cap = CAP_GAMMA_MULTIPLE * gamma;
            let runs: Vec<Vec<f64>> = (0..config.replicas)
                .into_par_iter()
                .map(|r| -> Result<Vec<f64>> {
                    let mut rng =
                        substream(opts.seed, domain::REPLICA, (2 + slot as u64) << 32 | r as u64);
                    let times = block_hitting_times(&kernel, &levels, &mut rng, cap)?;
                    Ok(times.iter().map(|h| h.hit().map_or(f64::NAN, |t| t / gamma)).collect())
                })
                .collect::<Result<_>>()?;
            for (idx, &level) in levels.iter().enumerate() {
                let finished: Vec<f64> =
                    runs.iter().map(|r| r[idx]).filter(|t| t.is_finite()).collect();
                let censored = config.replicas - finished.len();
                let fraction = censored as f64 / config.replicas as f64;
                if fraction > CENSOR_WARN_FRACTION {
                    report.warn(format!(
                        "size {n}, level {level}: {censored} of {} block runs hit the time cap",
                        config.replicas
                    ));
                }
                let mut rng =
                    substream(opts.seed, domain::REPLICA, (100 + slot as u64) << 32 | level as u64);
                let reference: Vec<f64> = (0..config.replicas)
                    .map(|_| kingman_tail_sample(level, &mut rng, KINGMAN_TRUNCATION_TOL))
                    .collect::<voterlab::Result<_>>()?;
                let ks = ks_two_sample(&finished, &reference);
                blocks.row(vec![
                    n.to_string(),
                    level.to_string(),
                    cell(ks),
                    cell(fraction),
                    finished.len().to_string(),
                ]);
            }
        }
    }

    // mean-field family: the rescaled law must settle toward its limit
    if config.kernel.is_complete() {
        for pair in law_ks.windows(2) {
            report.require(pair[1] <= pair[0] + KS_DECREASE_SLACK, || {
                format!(
                    "rescaled meeting law moved away from the limit: KS {} then {}",
                    pair[0], pair[1]
                )
            });
        }
    }
    report.metric("meeting_law_ks", serde_json::to_value(&law_ks).expect("serializes"));

    scale.write(out_dir)?;
    tail.write(out_dir)?;
    blocks.write(out_dir)?;
    Ok(report)
}
