//! Size sweep of time-rescaled empirical measures: moment, diversity, and
//! entropy curves per size against the limit references, with the
//! mean-field condition diagnostics per kernel.

use std::path::Path;

use anyhow::Result;
use rand::Rng;
use rayon::prelude::*;

use voterlab::coalescent::gamma_exact;
use voterlab::fvref::{fv_diversity_mean, fv_moment, fv_sample_types, FvInitial, FvSpec};
use voterlab::generators::ProductTestFunction;
use voterlab::graphical::{forward_voter_grid, generate_log};
use voterlab::measures::empirical;
use voterlab::rng::{domain, mix, substream};
use voterlab::stats::MeanSe;
use voterlab::typespace::MutationMeasure;

use super::{all_distinct_start, cyclic_start, fv_entropy_estimate, report_for, write_sample_log, RunOptions};
use crate::config::ExperimentConfig;
use crate::report::{cell, Report, Table};

/// Window for the diversity-limit check, in the spirit of a finite-size
/// correction of order one over the site count.
fn diversity_window(se: f64, n: usize) -> f64 {
    (3.0 * se).max(2.0 / n as f64)
}

struct TimeRow {
    t: f64,
    m1: MeanSe,
    m2: MeanSe,
    diversity: MeanSe,
    entropy: MeanSe,
    fv_m1: (f64, f64),
    fv_m2: (f64, f64),
    fv_diversity: (f64, f64),
    fv_entropy: (f64, f64),
}

struct SizeOutput {
    n: usize,
    rows: Vec<TimeRow>,
    initial_m1: f64,
}

pub fn run(config: &ExperimentConfig, opts: &RunOptions, out_dir: &Path) -> Result<Report> {
    let mut report = report_for(config, opts);
    let mutation_free = config.mutation.total == 0.0;
    let m = config.type_space.len();

    let mut sweep = Table::new(
        "convergence_sweep",
        &[
            "size", "t", "m1", "m1_se", "fv_m1", "fv_m1_se", "m2", "m2_se", "fv_m2", "fv_m2_se",
            "diversity", "diversity_se", "fv_diversity", "fv_diversity_se", "entropy",
            "entropy_se", "fv_entropy", "fv_entropy_se",
        ],
    );
    let mut diagnostics = Table::new(
        "convergence_diagnostics",
        &[
            "size", "gamma", "pi_diag", "pi_max", "t_mix", "mixing_ratio", "gap_conventional",
            "gap_mass_weighted", "relaxation_ratio", "mu_total", "rescaled_mu_total",
        ],
    );

    let mut outputs = Vec::new();
    let mut diag_series: Vec<(f64, f64, Option<f64>)> = Vec::new();
    for (slot, &n) in config.sizes.iter().enumerate() {
        let kernel = config.kernel.build_salted(n, 0)?;
        let gamma = gamma_exact(&kernel)?;
        let mu_n = config.mutation.scaled(gamma)?;
        let mixing = kernel.mixing_report(gamma)?;
        let pi = kernel.pi().to_vec();

        // with mutation the sweep keeps the configured type space; without
        // it, every site starts distinct and the types are the sites
        let (m_eff, xi0) = if mutation_free {
            (n, all_distinct_start(n))
        } else {
            (m, cyclic_start(n, m))
        };
        let mut f_rng = substream(opts.seed, domain::INIT, slot as u64);
        let f: Vec<f64> = (0..m_eff).map(|_| f_rng.random::<f64>()).collect();
        let initial = empirical(&xi0, &pi, m_eff);
        let initial_m1 = initial.integrate(&f);
        let initial_sq = initial.integrate(&f.iter().map(|v| v * v).collect::<Vec<_>>());

        let voter_times: Vec<f64> = config.time_grid.iter().map(|t| t * gamma).collect();
        let horizon = voter_times.last().copied().unwrap_or(0.0).max(1e-9);
        let samples: Vec<Vec<[f64; 4]>> = (0..config.replicas)
            .into_par_iter()
            .map(|r| -> Result<Vec<[f64; 4]>> {
                let seed = mix(opts.seed, ((slot as u64) << 40) + r as u64);
                let log = generate_log(&kernel, &mu_n, horizon, seed)?;
                let snapshots = forward_voter_grid(&log, &xi0, &voter_times)?;
                Ok(snapshots
                    .iter()
                    .map(|xi| {
                        let measure = empirical(xi, &pi, m_eff);
                        let m1 = measure.integrate(&f);
                        [m1, m1 * m1, measure.diversity(), measure.entropy()]
                    })
                    .collect())
            })
            .collect::<Result<_>>()?;

        let fv_replicas = config.replicas.max(1000);
        let target_mu = config.mutation.target()?;
        let mut rows = Vec::new();
        for (idx, &t) in config.time_grid.iter().enumerate() {
            let column = |c: usize| -> MeanSe {
                let values: Vec<f64> = samples.iter().map(|rep| rep[idx][c]).collect();
                MeanSe::from_samples(&values)
            };
            let (m1, m2, diversity, entropy) = (column(0), column(1), column(2), column(3));
            let mut fv_rng = substream(opts.seed, domain::REPLICA, ((slot as u64) << 8) + idx as u64);
            let (fv_m1, fv_m2, fv_diversity) = if mutation_free {
                let merged = 1.0 - (-t).exp();
                (
                    (initial_m1, 0.0),
                    (merged * initial_sq + (1.0 - merged) * initial_m1 * initial_m1, 0.0),
                    (fv_diversity_mean(0.0, t), 0.0),
                )
            } else {
                let spec = FvSpec::new(FvInitial::Atomic(initial.clone()), target_mu.clone())?;
                let one = fv_moment(&spec, &ProductTestFunction::new(vec![f.clone()])?, t, fv_replicas, &mut fv_rng)?;
                let two = fv_moment(
                    &spec,
                    &ProductTestFunction::new(vec![f.clone(), f.clone()])?,
                    t,
                    fv_replicas,
                    &mut fv_rng,
                )?;
                let pairs: Vec<f64> = (0..fv_replicas)
                    .map(|_| {
                        fv_sample_types(&spec, 2, t, &mut fv_rng)
                            .map(|types| f64::from(types[0] == types[1]))
                    })
                    .collect::<voterlab::Result<_>>()?;
                let pair = MeanSe::from_samples(&pairs);
                ((one.mean, one.se), (two.mean, two.se), (pair.mean, pair.se))
            };
            let fv_entropy = {
                let spec = if mutation_free {
                    FvSpec::new(FvInitial::Nonatomic, MutationMeasure::zero(m))?
                } else {
                    FvSpec::new(FvInitial::Atomic(initial.clone()), target_mu.clone())?
                };
                let est = fv_entropy_estimate(&spec, n, t, fv_replicas, &mut fv_rng)?;
                (est.mean, est.se)
            };
            rows.push(TimeRow { t, m1, m2, diversity, entropy, fv_m1, fv_m2, fv_diversity, fv_entropy });
        }

        for row in &rows {
            sweep.row(vec![
                n.to_string(),
                cell(row.t),
                cell(row.m1.mean),
                cell(row.m1.se),
                cell(row.fv_m1.0),
                cell(row.fv_m1.1),
                cell(row.m2.mean),
                cell(row.m2.se),
                cell(row.fv_m2.0),
                cell(row.fv_m2.1),
                cell(row.diversity.mean),
                cell(row.diversity.se),
                cell(row.fv_diversity.0),
                cell(row.fv_diversity.1),
                cell(row.entropy.mean),
                cell(row.entropy.se),
                cell(row.fv_entropy.0),
                cell(row.fv_entropy.1),
            ]);
        }
        diagnostics.row(vec![
            n.to_string(),
            cell(gamma),
            cell(mixing.pi_diag),
            cell(mixing.pi_max),
            cell(mixing.t_mix),
            cell(mixing.mixing_ratio),
            mixing.gap_conventional.map_or_else(|| "na".into(), cell),
            mixing.gap_mass_weighted.map_or_else(|| "na".into(), cell),
            mixing.relaxation_ratio.map_or_else(|| "na".into(), cell),
            cell(mu_n.total()),
            cell(gamma * mu_n.total()),
        ]);
        diag_series.push((mixing.pi_diag, mixing.mixing_ratio, mixing.relaxation_ratio));

        if opts.dump_log && slot + 1 == config.sizes.len() {
            let seed = mix(opts.seed, (slot as u64) << 40);
            let log = generate_log(&kernel, &mu_n, horizon, seed)?;
            write_sample_log(&log, out_dir)?;
        }
        outputs.push(SizeOutput { n, rows, initial_m1 });
    }

    gate_mean_field(config, &outputs, mutation_free, &mut report);
    for pair in diag_series.windows(2) {
        if pair[1].0 > pair[0].0 {
            report.warn(format!("pi_diag increased across sizes: {} then {}", pair[0].0, pair[1].0));
        }
        if pair[1].1 > pair[0].1 {
            report.warn(format!(
                "t_mix over gamma increased across sizes: {} then {}",
                pair[0].1, pair[1].1
            ));
        }
        if let (Some(a), Some(b)) = (pair[0].2, pair[1].2) {
            if b > a {
                report.warn(format!("relaxation ratio increased across sizes: {a} then {b}"));
            }
        }
    }

    sweep.write(out_dir)?;
    diagnostics.write(out_dir)?;
    report.metric("sizes", serde_json::to_value(&config.sizes).expect("serializes"));
    report.metric("mutation_free", mutation_free);
    Ok(report)
}

/// Hard checks that only make sense on the mean-field family without
/// mutation: flat first moments, the diversity limit at time one, and
/// errors shrinking as the size doubles.
fn gate_mean_field(
    config: &ExperimentConfig,
    outputs: &[SizeOutput],
    mutation_free: bool,
    report: &mut Report,
) {
    if !config.kernel.is_complete() || !mutation_free {
        return;
    }
    for out in outputs {
        for row in &out.rows {
            if row.t == 0.0 {
                continue;
            }
            report.require((row.m1.mean - out.initial_m1).abs() <= 3.0 * row.m1.se, || {
                format!(
                    "size {}: first moment drifted at t {}: {} vs initial {}",
                    out.n, row.t, row.m1.mean, out.initial_m1
                )
            });
        }
        if let Some(row) = out.rows.iter().find(|row| (row.t - 1.0).abs() < 1e-12) {
            let limit = fv_diversity_mean(0.0, 1.0);
            let window = diversity_window(row.diversity.se, out.n);
            report.require((row.diversity.mean - limit).abs() <= window, || {
                format!(
                    "size {}: diversity {} at t 1 misses the limit {limit} by more than {window}",
                    out.n, row.diversity.mean
                )
            });
        } else {
            report.warn("time grid skips t = 1, diversity-limit check not run".to_string());
        }
    }
    for pair in outputs.windows(2) {
        let (small, large) = (&pair[0], &pair[1]);
        for (a, b) in small.rows.iter().zip(&large.rows) {
            if a.t == 0.0 {
                continue;
            }
            let limit = fv_diversity_mean(0.0, a.t);
            let err_small = (a.diversity.mean - limit).abs();
            let err_large = (b.diversity.mean - limit).abs();
            let band = 2.0 * (a.diversity.se.powi(2) + b.diversity.se.powi(2)).sqrt();
            report.require(err_large <= err_small + band, || {
                format!(
                    "diversity error grew from size {} to {} at t {}: {err_small} to {err_large}",
                    small.n, large.n, a.t
                )
            });
        }
    }
}
