//! Reference statistics for the measure-valued limit, generated through its
//! n-sample genealogy.
//!
//! A sample of size n at time t is produced by running the sample's
//! genealogy backward for duration t: every lineage pair merges at rate 1
//! and every lineage is killed at the total mutation rate, in which case it
//! takes a fresh normalized-mutation-law type and drops out.  Lineages alive
//! at the bottom of the window draw their types from the initial measure; a
//! nonatomic initial measure hands every surviving lineage a fresh unique
//! label.  Closed two-lineage formulas (diversity mean, pair moments) and
//! the limiting block-count law complete the reference set.

use rand::Rng;

use crate::coalescent::{kingman_tail_sample, KINGMAN_TRUNCATION_TOL};
use crate::generators::ProductTestFunction;
use crate::measures::FiniteMeasure;
use crate::rng::{exp_rate, AliasTable};
use crate::stats::MeanSe;
use crate::typespace::MutationMeasure;
use crate::{Error, Result};

/// Labels for surviving lineages under a nonatomic initial measure start
/// here, clear of every atom index.
pub const NONATOMIC_LABEL_BASE: u64 = 1 << 32;

/// Initial measure of the limit process.
#[derive(Debug, Clone)]
pub enum FvInitial {
    /// Atomic probability measure on the type space.
    Atomic(FiniteMeasure),
    /// Nonatomic: ancestral types are almost surely distinct, emulated with
    /// unique labels.
    Nonatomic,
}

/// Initial measure plus mutation measure: everything the sampler needs.
#[derive(Debug, Clone)]
pub struct FvSpec {
    initial: FvInitial,
    mutation: MutationMeasure,
}

impl FvSpec {
    pub fn new(initial: FvInitial, mutation: MutationMeasure) -> Result<Self> {
        if let FvInitial::Atomic(measure) = &initial {
            if (measure.total() - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidInput(
                    "atomic initial measure must have total mass one".into(),
                ));
            }
            if measure.len() != mutation.len() {
                return Err(Error::InvalidInput(
                    "initial and mutation measures must share the type space".into(),
                ));
            }
        }
        Ok(Self { initial, mutation })
    }

    pub fn initial(&self) -> &FvInitial {
        &self.initial
    }

    pub fn mutation(&self) -> &MutationMeasure {
        &self.mutation
    }
}

/// One n-sample draw with its genealogy bookkeeping.
#[derive(Debug, Clone)]
pub struct FvDraw {
    /// Type per sample coordinate; atom indices, or unique labels from
    /// [`NONATOMIC_LABEL_BASE`] upward for nonatomic ancestral draws.
    pub types: Vec<u64>,
    /// Coordinates sharing an origin id received their type from the same
    /// assignment event (same ancestral lineage or same mutation mark).
    pub origin: Vec<usize>,
    /// Whether the coordinate's type came from a mutation mark.
    pub mutant: Vec<bool>,
}

/// Draw an exchangeable n-sample of the limit process at time `t`.
pub fn fv_sample<R: Rng + ?Sized>(spec: &FvSpec, n: usize, t: f64, rng: &mut R) -> Result<FvDraw> {
    if n == 0 {
        return Err(Error::InvalidInput("sample size must be at least one".into()));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidInput("sample time must be nonnegative and finite".into()));
    }
    let theta = spec.mutation.total();
    let mark_law = if theta > 0.0 {
        Some(AliasTable::new(spec.mutation.normalize().weights()))
    } else {
        None
    };
    let atom_law = match &spec.initial {
        FvInitial::Atomic(measure) => Some(AliasTable::new(measure.weights())),
        FvInitial::Nonatomic => None,
    };
    let mut draw = FvDraw {
        types: vec![0; n],
        origin: vec![0; n],
        mutant: vec![false; n],
    };
    let mut lineages: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut next_origin = 0usize;
    let mut assign = |draw: &mut FvDraw, members: &[usize], value: u64, from_mark: bool| {
        for &i in members {
            draw.types[i] = value;
            draw.origin[i] = next_origin;
            draw.mutant[i] = from_mark;
        }
        next_origin += 1;
    };
    let mut clock = 0.0;
    while !lineages.is_empty() {
        let k = lineages.len();
        let pair_rate = (k * (k - 1)) as f64 / 2.0;
        let kill_rate = theta * k as f64;
        let total = pair_rate + kill_rate;
        if total == 0.0 {
            break;
        }
        let next = clock + exp_rate(rng, total);
        if next > t {
            break;
        }
        clock = next;
        if rng.random::<f64>() * total < pair_rate {
            let a = rng.random_range(0..k);
            let mut b = rng.random_range(0..k - 1);
            if b >= a {
                b += 1;
            }
            let absorbed = lineages.swap_remove(b.max(a));
            lineages[a.min(b)].extend(absorbed);
        } else {
            let idx = rng.random_range(0..k);
            let mark = mark_law.as_ref().expect("kills need mutation mass").sample(rng) as u64;
            let members = lineages.swap_remove(idx);
            assign(&mut draw, &members, mark, true);
        }
    }
    let mut nonatomic_label = NONATOMIC_LABEL_BASE;
    for members in &lineages {
        let value = match &atom_law {
            Some(law) => law.sample(rng) as u64,
            None => {
                nonatomic_label += 1;
                nonatomic_label - 1
            }
        };
        assign(&mut draw, members, value, false);
    }
    Ok(draw)
}

/// Types only, without genealogy bookkeeping.
pub fn fv_sample_types<R: Rng + ?Sized>(
    spec: &FvSpec,
    n: usize,
    t: f64,
    rng: &mut R,
) -> Result<Vec<u64>> {
    Ok(fv_sample(spec, n, t, rng)?.types)
}

/// Monte-Carlo estimate of the product moment `E prod_i <f_i, X_t>`: each
/// replica draws a k-sample and evaluates one factor per coordinate.
/// Requires an atomic initial measure so factor values are defined.
pub fn fv_moment<R: Rng + ?Sized>(
    spec: &FvSpec,
    phi: &ProductTestFunction,
    t: f64,
    replicas: usize,
    rng: &mut R,
) -> Result<MeanSe> {
    if replicas < 1000 {
        return Err(Error::InvalidInput(format!(
            "moment estimation needs at least 1000 replicas, got {replicas}"
        )));
    }
    match &spec.initial {
        FvInitial::Atomic(measure) if measure.len() == phi.n_types() => {}
        FvInitial::Atomic(_) => {
            return Err(Error::InvalidInput(
                "test function and initial measure must share the type space".into(),
            ))
        }
        FvInitial::Nonatomic => {
            return Err(Error::InvalidInput(
                "moment estimation needs an atomic initial measure".into(),
            ))
        }
    }
    let k = phi.k();
    let mut samples = Vec::with_capacity(replicas);
    for _ in 0..replicas {
        let types = fv_sample_types(spec, k, t, rng)?;
        let value: f64 = types
            .iter()
            .enumerate()
            .map(|(i, &tau)| phi.factor(i)[tau as usize])
            .product();
        samples.push(value);
    }
    Ok(MeanSe::from_samples(&samples))
}

/// Closed-form mean diversity from a nonatomic start: the probability that a
/// sampled pair finds a common ancestor within `t` before either lineage
/// mutates, `(1 - e^{-(1+2 theta) t}) / (1 + 2 theta)`.
pub fn fv_diversity_mean(theta: f64, t: f64) -> f64 {
    let rate = 1.0 + 2.0 * theta;
    (1.0 - (-rate * t).exp()) / rate
}

/// Estimate `P(block count at time t <= j)` for the limiting genealogy,
/// i.e. the law of the truncated series of pair-merge waits.  `n_start`
/// restricts the genealogy to finitely many starting lineages; `None` uses
/// the entrance-from-infinity truncation of
/// [`kingman_tail_sample`].
pub fn fv_blockcount_dist<R: Rng + ?Sized>(
    j: usize,
    t: f64,
    replicas: usize,
    rng: &mut R,
    n_start: Option<usize>,
) -> Result<MeanSe> {
    if j == 0 {
        return Err(Error::InvalidInput("block level must be at least 1".into()));
    }
    if replicas < 2 {
        return Err(Error::InvalidInput("need at least two replicas".into()));
    }
    if let Some(n0) = n_start {
        if n0 <= j {
            return Err(Error::InvalidInput(format!(
                "starting lineage count {n0} must exceed the block level {j}"
            )));
        }
    }
    let mut hits = Vec::with_capacity(replicas);
    for _ in 0..replicas {
        let wait = match n_start {
            None => kingman_tail_sample(j, rng, KINGMAN_TRUNCATION_TOL)?,
            Some(n0) => (j + 1..=n0)
                .map(|i| exp_rate(rng, (i * (i - 1)) as f64 / 2.0))
                .sum(),
        };
        hits.push(if wait <= t { 1.0 } else { 0.0 });
    }
    Ok(MeanSe::from_samples(&hits))
}
