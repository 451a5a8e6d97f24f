//! Acceptance suite: the nine headline checks, one test each, every test
//! printing a single summary line (visible with `--nocapture`).
//!
//! Tolerances are pinned here rather than inherited from the library so a
//! regression in either place is caught.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use voterlab::coalescent::{
    block_hitting_times, gamma_exact, gamma_mc, kingman_tail_sample, meeting_tail_profile,
    KINGMAN_TRUNCATION_TOL,
};
use voterlab::fvref::fv_diversity_mean;
use voterlab::generators::{
    l_brute, l_mu_pair, l_mu_product, l_vm_pair, l_vm_product, PairTestFunction,
    ProductTestFunction,
};
use voterlab::graphical::{duality_check, duality_gap_bound, forward_voter_grid, generate_log};
use voterlab::kernel::Kernel;
use voterlab::measures::{atomic_discrepancy, empirical, prohorov, rho_a, FiniteMeasure};
use voterlab::rng::{domain, mix, substream};
use voterlab::stats::{ks_two_sample, MeanSe};
use voterlab::typespace::{MutationMeasure, TypeSpace};
use voterlab::Configuration;

/// Exact-identity instance counts.
const DUALITY_INSTANCES: usize = 10_000;
const GENERATOR_INSTANCES: usize = 1_000;
const METRIC_TRIPLES: usize = 1_000;
const BOUND_INSTANCES: usize = 100;

/// Numeric tolerances.
const GENERATOR_REL_TOL: f64 = 1e-10;
const GAMMA_CLOSED_FORM_TOL: f64 = 1e-8;
const BLOCK_KS_MAX: f64 = 0.03;
const TRIANGLE_SLACK: f64 = 1e-9;

fn random_dense_kernel(rng: &mut ChaCha8Rng, n: usize) -> Kernel {
    let mut rows = vec![vec![0.0; n]; n];
    for (x, row) in rows.iter_mut().enumerate() {
        let mut sum = 0.0;
        for (y, v) in row.iter_mut().enumerate() {
            if y != x {
                *v = 0.05 + rng.random::<f64>();
                sum += *v;
            }
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    Kernel::from_rows(rows).unwrap()
}

fn random_mutation(rng: &mut ChaCha8Rng, m: usize, total: f64) -> MutationMeasure {
    if total == 0.0 {
        return MutationMeasure::zero(m);
    }
    let raw: Vec<f64> = (0..m).map(|_| 0.05 + rng.random::<f64>()).collect();
    let sum: f64 = raw.iter().sum();
    MutationMeasure::new(raw.iter().map(|w| w * total / sum).collect()).unwrap()
}

fn random_configuration(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Configuration {
    (0..n).map(|_| rng.random_range(0..m) as u32).collect()
}

#[test]
fn pathwise_duality_is_exact_on_randomized_instances() {
    let mut rng = substream(0xACC0, domain::INIT, 1);
    let mut exact = 0usize;
    for round in 0..DUALITY_INSTANCES {
        let n = rng.random_range(2..=8);
        let kernel = match round % 5 {
            0 => Kernel::complete(n.max(2)).unwrap(),
            1 => Kernel::cycle(n.max(3)).unwrap(),
            _ => random_dense_kernel(&mut rng, n),
        };
        let m = rng.random_range(1..=4);
        let theta = if round % 4 == 0 { 0.0 } else { rng.random::<f64>() };
        let mu = random_mutation(&mut rng, m, theta);
        let t = rng.random::<f64>() * 5.0;
        let horizon = t.max(1e-3);
        let log = generate_log(&kernel, &mu, horizon, mix(0xD0A1, round as u64)).unwrap();
        let xi0 = random_configuration(&mut rng, kernel.n(), m);
        if duality_check(&log, &xi0, t).unwrap() {
            exact += 1;
        }
    }
    let pass = exact == DUALITY_INSTANCES;
    println!(
        "criterion 1 (pathwise duality): {} — {exact}/{DUALITY_INSTANCES} instances exact",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass);
}

#[test]
fn generator_displays_match_the_enumeration_oracle() {
    let mut rng = substream(0xACC0, domain::INIT, 2);
    let mut worst = 0.0f64;
    let mut passed = 0usize;
    for _ in 0..GENERATOR_INSTANCES {
        let n = rng.random_range(2..=6);
        let kernel = random_dense_kernel(&mut rng, n);
        let m = rng.random_range(1..=4);
        let k = rng.random_range(1..=3);
        let theta = rng.random::<f64>() * 2.0;
        let mu = random_mutation(&mut rng, m, theta);
        let pi = kernel.pi().to_vec();
        let xi = random_configuration(&mut rng, n, m);
        let factors: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..m).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect())
            .collect();
        let phi = ProductTestFunction::new(factors).unwrap();
        let closed = l_vm_product(&kernel, &phi, &xi) + l_mu_product(&pi, &mu, &phi, &xi);
        let brute = l_brute(&kernel, &mu, |c| phi.eval(&empirical(c, &pi, m)), &xi);
        let scale = closed.abs().max(brute.abs()).max(1.0);
        let product_err = (closed - brute).abs() / scale;

        let mut values = Array2::zeros((m, m));
        for v in values.iter_mut() {
            *v = rng.random::<f64>() * 2.0 - 1.0;
        }
        let f = PairTestFunction::new(values).unwrap();
        let closed = l_vm_pair(&kernel, &f, &xi) + l_mu_pair(&pi, &mu, &f, &xi);
        let brute = l_brute(&kernel, &mu, |c| f.pair_average(c, &pi), &xi);
        let scale = closed.abs().max(brute.abs()).max(1.0);
        let pair_err = (closed - brute).abs() / scale;

        let err = product_err.max(pair_err);
        worst = worst.max(err);
        if err <= GENERATOR_REL_TOL {
            passed += 1;
        }
    }
    let pass = passed == GENERATOR_INSTANCES;
    println!(
        "criterion 2 (generator oracle equivalence): {} — {passed}/{GENERATOR_INSTANCES} within {GENERATOR_REL_TOL:.0e} (worst {worst:.2e})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass);
}

#[test]
fn meeting_time_scale_matches_closed_forms_and_monte_carlo() {
    let mut worst = 0.0f64;
    for n in 2..=200usize {
        let kernel = Kernel::complete(n).unwrap();
        let gamma = gamma_exact(&kernel).unwrap();
        let expected = ((n - 1) * (n - 1)) as f64 / (2 * n) as f64;
        worst = worst.max((gamma - expected).abs());
    }
    assert!(
        worst < GAMMA_CLOSED_FORM_TOL,
        "closed-form deviation {worst:.2e}"
    );
    let mut agreements = 0usize;
    for instance in 0..10u64 {
        let mut rng = substream(0xACC0, domain::INIT, 300 + instance);
        let kernel = random_dense_kernel(&mut rng, 8);
        let exact = gamma_exact(&kernel).unwrap();
        let mut rng = substream(0xACC0, domain::REPLICA, 300 + instance);
        let mc = gamma_mc(&kernel, 20_000, &mut rng).unwrap();
        if (mc.mean - exact).abs() < 3.0 * mc.se {
            agreements += 1;
        }
    }
    let pass = agreements == 10;
    println!(
        "criterion 3 (meeting-time scale): {} — complete-graph worst {worst:.2e}, {agreements}/10 kernels within 3 sigma",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass);
}

#[test]
fn rescaled_meeting_tail_has_the_exponential_profile() {
    let n = 100usize;
    let kernel = Kernel::complete(n).unwrap();
    let gamma = gamma_exact(&kernel).unwrap();
    let grid = [0.5, 1.0, 2.0];
    let mut rng = substream(0xACC0, domain::REPLICA, 4);
    let rows = meeting_tail_profile(&kernel, gamma, &grid, 100_000, &mut rng).unwrap();
    let shrink = (n - 1) as f64 / n as f64;
    let prefactor = shrink * shrink;
    let mut pass = true;
    let mut limit_note = String::new();
    for row in &rows {
        let tail_exact = prefactor * (-row.t * shrink).exp();
        if (row.tail.mean - tail_exact).abs() > 3.0 * row.tail.se {
            pass = false;
        }
        // the running-integral value at finite n; its distance to the
        // limit 1 - e^{-t} is the known O(1/n) profile gap
        let integral_exact = shrink * (1.0 - (-row.t * shrink).exp());
        let limit = 1.0 - (-row.t).exp();
        if (row.integral.mean - integral_exact).abs() > 3.0 * row.integral.se {
            pass = false;
        }
        if (row.integral.mean - limit).abs() > (integral_exact - limit).abs() + 3.0 * row.integral.se {
            pass = false;
        }
        limit_note.push_str(&format!(
            " t={}: tail {:.4} (exact {:.4}), integral {:.4} (exact {:.4}, limit {:.4});",
            row.t, row.tail.mean, tail_exact, row.integral.mean, integral_exact, limit
        ));
    }
    println!(
        "criterion 4 (exponential meeting limit): {} —{limit_note}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass);
}

#[test]
fn block_count_times_follow_the_limit_series() {
    let n = 500usize;
    let kernel = Kernel::complete(n).unwrap();
    let gamma = gamma_exact(&kernel).unwrap();
    let levels = [1usize, 2, 5];
    let replicas = 10_000usize;
    let mut rescaled: Vec<Vec<f64>> = vec![Vec::with_capacity(replicas); levels.len()];
    let mut rng = substream(0xACC0, domain::REPLICA, 5);
    for _ in 0..replicas {
        let times = block_hitting_times(&kernel, &levels, &mut rng, f64::INFINITY).unwrap();
        for (slot, time) in times.iter().enumerate() {
            rescaled[slot].push(time.hit().expect("uncapped run") / gamma);
        }
    }
    let mut pass = true;
    let mut note = String::new();
    for (slot, &j) in levels.iter().enumerate() {
        let reference: Vec<f64> = (0..replicas)
            .map(|_| kingman_tail_sample(j, &mut rng, KINGMAN_TRUNCATION_TOL).unwrap())
            .collect();
        let ks = ks_two_sample(&rescaled[slot], &reference);
        if ks >= BLOCK_KS_MAX {
            pass = false;
        }
        note.push_str(&format!(" j={j}: KS {ks:.4};"));
    }
    println!(
        "criterion 5 (block-count limit): {} —{note} threshold {BLOCK_KS_MAX}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass);
}

#[test]
fn voter_diversity_approaches_the_limit_mean() {
    let reference = fv_diversity_mean(0.0, 1.0);
    let replicas = 10_000usize;
    let mut errors = Vec::new();
    let mut ses = Vec::new();
    let mut pass = true;
    let mut note = String::new();
    for (idx, n) in [128usize, 256].into_iter().enumerate() {
        let kernel = Kernel::complete(n).unwrap();
        let gamma = gamma_exact(&kernel).unwrap();
        let mu = MutationMeasure::zero(n);
        let pi = kernel.pi().to_vec();
        let xi0: Configuration = (0..n as u32).collect();
        let mut samples = Vec::with_capacity(replicas);
        for r in 0..replicas {
            let seed = mix(0xD1E5 + idx as u64, r as u64);
            let log = generate_log(&kernel, &mu, gamma, seed).unwrap();
            let xi = &forward_voter_grid(&log, &xi0, &[gamma]).unwrap()[0];
            samples.push(empirical(xi, &pi, n).diversity());
        }
        let est = MeanSe::from_samples(&samples);
        let err = (est.mean - reference).abs();
        let window = (3.0 * est.se).max(2.0 / n as f64);
        if err > window {
            pass = false;
        }
        note.push_str(&format!(
            " n={n}: mean {:.5} (err {err:.5}, window {window:.5});",
            est.mean
        ));
        errors.push(err);
        ses.push(est.se);
    }
    let band = 2.0 * (ses[0] * ses[0] + ses[1] * ses[1]).sqrt();
    if errors[1] > errors[0] + band {
        pass = false;
    }
    println!(
        "criterion 6 (diversity limit): {} —{note} reference {reference:.5}, error decrease band {band:.5}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass);
}

#[test]
fn pair_correlation_bound_dominates_on_randomized_instances() {
    let mut rng = substream(0xACC0, domain::INIT, 7);
    let mut held = 0usize;
    for round in 0..BOUND_INSTANCES {
        let kernel = random_dense_kernel(&mut rng, 5);
        let t = if round % 2 == 0 { 0.5 } else { 2.0 };
        let theta = if round % 4 < 2 { 0.0 } else { 0.2 };
        let m = 3;
        let mu = random_mutation(&mut rng, m, theta);
        let xi0 = random_configuration(&mut rng, 5, m);
        let mut values = Array2::zeros((m, m));
        for s in 0..m {
            for u in 0..m {
                if s != u {
                    values[[s, u]] = rng.random::<f64>() * 2.0 - 1.0;
                }
            }
        }
        let f = PairTestFunction::new(values).unwrap();
        let gap = duality_gap_bound(&kernel, &mu, &xi0, 0, 4, &f, t, 10_000, round as u64).unwrap();
        if gap.lhs <= gap.rhs + 4.0 * (gap.lhs_se + gap.rhs_se) {
            held += 1;
        }
    }
    let pass = held == BOUND_INSTANCES;
    println!(
        "criterion 7 (pair-correlation bound): {} — held on {held}/{BOUND_INSTANCES} instances",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass);
}

#[test]
fn atomic_metric_satisfies_the_axioms_and_separates_colliding_atoms() {
    let mut rng = substream(0xACC0, domain::INIT, 8);
    let mut pass = true;
    for _ in 0..METRIC_TRIPLES {
        let m = rng.random_range(2..=5);
        let ts = TypeSpace::equally_spaced(m);
        let draw = |rng: &mut ChaCha8Rng| -> FiniteMeasure {
            let w: Vec<f64> = (0..m)
                .map(|_| {
                    if rng.random::<f64>() < 0.3 {
                        0.0
                    } else {
                        rng.random::<f64>()
                    }
                })
                .collect();
            if w.iter().sum::<f64>() == 0.0 {
                FiniteMeasure::point_mass(m, 0, 1.0)
            } else {
                FiniteMeasure::new(w).unwrap()
            }
        };
        let (a, b, c) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
        let ab = rho_a(&ts, &a, &b);
        let ba = rho_a(&ts, &b, &a);
        if ab != ba || ab < 0.0 {
            pass = false;
        }
        if rho_a(&ts, &a, &a) != 0.0 {
            pass = false;
        }
        let ac = rho_a(&ts, &a, &c);
        let bc = rho_a(&ts, &b, &c);
        if ac > ab + bc + TRIANGLE_SLACK {
            pass = false;
        }
    }
    // two atoms at shrinking distance against their merged limit: plain
    // closeness vanishes, the atomic part keeps the distance near 1/2
    let mut collision_note = String::new();
    for m in [4u32, 16, 64] {
        let eps = 1.0 / m as f64;
        let mut dist = Array2::zeros((2, 2));
        dist[[0, 1]] = eps;
        dist[[1, 0]] = eps;
        let ts = TypeSpace::new(vec!["a".into(), "b".into()], dist).unwrap();
        let split = FiniteMeasure::new(vec![0.5, 0.5]).unwrap();
        let merged = FiniteMeasure::new(vec![1.0, 0.0]).unwrap();
        let p = prohorov(&ts, &split, &merged);
        let atomic = atomic_discrepancy(&ts, &split, &merged);
        if (p - eps).abs() > 1e-9 || (atomic - 0.5).abs() > 1e-12 {
            pass = false;
        }
        collision_note.push_str(&format!(" eps={eps}: prohorov {p:.4}, rho_a {:.4};", p + atomic));
    }
    println!(
        "criterion 8 (atomic metric): {} — {METRIC_TRIPLES} triples checked;{collision_note}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass);
}

#[test]
fn moment_observables_are_flat_without_mutation() {
    let n = 128usize;
    let kernel = Kernel::complete(n).unwrap();
    let gamma = gamma_exact(&kernel).unwrap();
    let mu = MutationMeasure::zero(n);
    let pi = kernel.pi().to_vec();
    let xi0: Configuration = (0..n as u32).collect();
    let mut rng = substream(0xACC0, domain::INIT, 9);
    let f: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let initial_value = empirical(&xi0, &pi, n).integrate(&f);
    let grid = [0.25, 0.5, 1.0, 2.0, 3.0];
    let voter_times: Vec<f64> = grid.iter().map(|t| t * gamma).collect();
    let replicas = 10_000usize;
    let mut observed = vec![Vec::with_capacity(replicas); grid.len()];
    for r in 0..replicas {
        let log = generate_log(&kernel, &mu, voter_times[grid.len() - 1], mix(0xF1A7, r as u64)).unwrap();
        let snapshots = forward_voter_grid(&log, &xi0, &voter_times).unwrap();
        for (slot, xi) in snapshots.iter().enumerate() {
            observed[slot].push(empirical(xi, &pi, n).integrate(&f));
        }
    }
    let mut pass = true;
    let mut worst_z = 0.0f64;
    for series in &observed {
        let est = MeanSe::from_samples(series);
        let z = (est.mean - initial_value).abs() / est.se;
        worst_z = worst_z.max(z);
        if z > 3.0 {
            pass = false;
        }
    }
    println!(
        "criterion 9 (moment flatness): {} — initial {initial_value:.5}, worst z-score {worst_z:.2} over {} grid times",
        if pass { "PASS" } else { "FAIL" },
        grid.len()
    );
    assert!(pass);
}
