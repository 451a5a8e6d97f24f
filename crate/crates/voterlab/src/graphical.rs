//! Space-time event construction of the voter model.
//!
//! A log materializes, per site, a rate-1 Poisson stream of arrows (each with
//! a q-distributed target) and a rate-`mu(1)` stream of mutation marks (each
//! with a normalized-mutation-law type).  Running the log forward gives the
//! voter configuration at any time up to the horizon; tracing arrows
//! backward from a site gives the ancestral walk together with the first
//! mutation mark it covers.  Both passes read one shared realization, so the
//! forward type at a site equals the mutant mark when the backward walk hits
//! a mark, and the initial type at the walk's endpoint otherwise, exactly
//! and per realization.
//!
//! Simultaneous events have probability zero; equal floating-point times are
//! processed in (time, site, kind) lexicographic order with arrows before
//! mutations, so replays are deterministic.

use std::io::{Read, Write};

use crate::kernel::Kernel;
use crate::rng::{domain, exp_rate, mix, substream, AliasTable};
use crate::stats::MeanSe;
use crate::typespace::MutationMeasure;
use crate::{Configuration, Error, Result};

/// Largest expected event count a log generation accepts.
pub const LOG_EVENT_GUARD: f64 = 1e8;

/// Magic bytes and version of the binary log format.
pub const LOG_MAGIC: [u8; 4] = *b"VLOG";
pub const LOG_FORMAT_VERSION: u32 = 1;

/// Per-site arrow and mutation events on a bounded time window.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    horizon: f64,
    seed: u64,
    arrows: Vec<Vec<(f64, u32)>>,
    mutations: Vec<Vec<(f64, u32)>>,
}

impl EventLog {
    /// Assemble a log from explicit per-site event lists; times must be
    /// strictly increasing within each site and lie in the window.
    pub fn from_parts(
        horizon: f64,
        seed: u64,
        arrows: Vec<Vec<(f64, u32)>>,
        mutations: Vec<Vec<(f64, u32)>>,
    ) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidInput("horizon must be positive and finite".into()));
        }
        if arrows.len() != mutations.len() || arrows.is_empty() {
            return Err(Error::InvalidInput(
                "arrow and mutation lists must cover the same nonempty site set".into(),
            ));
        }
        let n = arrows.len();
        for (site, list) in arrows.iter().enumerate() {
            for pair in list.windows(2) {
                if pair[1].0 <= pair[0].0 {
                    return Err(Error::InvalidInput(format!(
                        "arrow times at site {site} not strictly increasing"
                    )));
                }
            }
            if list.iter().any(|&(t, s)| t <= 0.0 || t > horizon || s as usize >= n) {
                return Err(Error::InvalidInput(format!("arrow event at site {site} out of range")));
            }
            if list.iter().any(|&(_, s)| s as usize == site) {
                return Err(Error::InvalidInput(format!("self-targeted arrow at site {site}")));
            }
        }
        for (site, list) in mutations.iter().enumerate() {
            for pair in list.windows(2) {
                if pair[1].0 <= pair[0].0 {
                    return Err(Error::InvalidInput(format!(
                        "mutation times at site {site} not strictly increasing"
                    )));
                }
            }
            if list.iter().any(|&(t, _)| t <= 0.0 || t > horizon) {
                return Err(Error::InvalidInput(format!(
                    "mutation event at site {site} out of range"
                )));
            }
        }
        Ok(Self { horizon, seed, arrows, mutations })
    }

    pub fn n_sites(&self) -> usize {
        self.arrows.len()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn arrows(&self, site: usize) -> &[(f64, u32)] {
        &self.arrows[site]
    }

    pub fn mutations(&self, site: usize) -> &[(f64, u32)] {
        &self.mutations[site]
    }

    /// Serialize as a little-endian binary blob with a versioned header.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        let mut put = |bytes: &[u8]| -> Result<()> {
            out.write_all(bytes)
                .map_err(|e| Error::Serialization(format!("log write failed: {e}")))
        };
        put(&LOG_MAGIC)?;
        put(&LOG_FORMAT_VERSION.to_le_bytes())?;
        put(&(self.n_sites() as u64).to_le_bytes())?;
        put(&self.horizon.to_le_bytes())?;
        put(&self.seed.to_le_bytes())?;
        for site in 0..self.n_sites() {
            for list in [&self.arrows[site], &self.mutations[site]] {
                put(&(list.len() as u64).to_le_bytes())?;
                for &(t, payload) in list {
                    put(&t.to_le_bytes())?;
                    put(&payload.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    /// Read a blob produced by [`EventLog::write_binary`].
    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        fn take<const N: usize, R: Read>(input: &mut R) -> Result<[u8; N]> {
            let mut buf = [0u8; N];
            input
                .read_exact(&mut buf)
                .map_err(|e| Error::Serialization(format!("log read failed: {e}")))?;
            Ok(buf)
        }
        let magic: [u8; 4] = take(&mut input)?;
        if magic != LOG_MAGIC {
            return Err(Error::Serialization("not an event-log blob".into()));
        }
        let version = u32::from_le_bytes(take(&mut input)?);
        if version != LOG_FORMAT_VERSION {
            return Err(Error::Serialization(format!("unsupported log format version {version}")));
        }
        let n = u64::from_le_bytes(take(&mut input)?) as usize;
        let horizon = f64::from_le_bytes(take(&mut input)?);
        let seed = u64::from_le_bytes(take(&mut input)?);
        let mut arrows = Vec::with_capacity(n);
        let mut mutations = Vec::with_capacity(n);
        for _ in 0..n {
            for target in [&mut arrows, &mut mutations] {
                let count = u64::from_le_bytes(take(&mut input)?) as usize;
                let mut list = Vec::with_capacity(count);
                for _ in 0..count {
                    let t = f64::from_le_bytes(take(&mut input)?);
                    let payload = u32::from_le_bytes(take(&mut input)?);
                    list.push((t, payload));
                }
                target.push(list);
            }
        }
        Self::from_parts(horizon, seed, arrows, mutations)
    }
}

/// Generate the event log on `(0, horizon]`.  Arrow and mutation streams use
/// separate per-site substreams of `seed`, so logs are reproducible
/// bit-for-bit and sites are independent.
pub fn generate_log(
    kernel: &Kernel,
    mu: &MutationMeasure,
    horizon: f64,
    seed: u64,
) -> Result<EventLog> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidInput("horizon must be positive and finite".into()));
    }
    let n = kernel.n();
    let theta = mu.total();
    let expected = n as f64 * horizon * (1.0 + theta);
    if expected > LOG_EVENT_GUARD {
        return Err(Error::SizeGuard(format!(
            "expected event count {expected:.2e} exceeds the {LOG_EVENT_GUARD:.0e} guard"
        )));
    }
    let rows = kernel.row_sampler();
    let mark_law = if theta > 0.0 {
        Some(AliasTable::new(mu.normalize().weights()))
    } else {
        None
    };
    let mut arrows = Vec::with_capacity(n);
    let mut mutations = Vec::with_capacity(n);
    for site in 0..n {
        let mut rng = substream(seed, domain::ARROWS, site as u64);
        let mut list = Vec::new();
        let mut clock = exp_rate(&mut rng, 1.0);
        while clock <= horizon {
            list.push((clock, rows.jump(site, &mut rng) as u32));
            clock += exp_rate(&mut rng, 1.0);
        }
        arrows.push(list);
        let mut list = Vec::new();
        if let Some(law) = &mark_law {
            let mut rng = substream(seed, domain::MUTATIONS, site as u64);
            let mut clock = exp_rate(&mut rng, theta);
            while clock <= horizon {
                list.push((clock, law.sample(&mut rng) as u32));
                clock += exp_rate(&mut rng, theta);
            }
        }
        mutations.push(list);
    }
    EventLog::from_parts(horizon, seed, arrows, mutations)
}

/// Configuration at each time of an ascending grid, from one forward pass.
/// At an arrow the site copies the target's type; at a mark it adopts the
/// mutant type.
pub fn forward_voter_grid(
    log: &EventLog,
    xi0: &Configuration,
    times: &[f64],
) -> Result<Vec<Configuration>> {
    if xi0.len() != log.n_sites() {
        return Err(Error::InvalidInput(format!(
            "configuration covers {} sites, log has {}",
            xi0.len(),
            log.n_sites()
        )));
    }
    if times.windows(2).any(|p| p[1] < p[0]) {
        return Err(Error::InvalidInput("query times must be ascending".into()));
    }
    if let Some(&t) = times.iter().find(|&&t| t < 0.0 || t > log.horizon()) {
        return Err(Error::OutOfRange(format!(
            "query time {t} outside the log window [0, {}]",
            log.horizon()
        )));
    }
    let t_max = times.last().copied().unwrap_or(0.0);
    // (time, site, kind, payload); arrows sort before marks at equal times
    let mut events: Vec<(f64, u32, u8, u32)> = Vec::new();
    for site in 0..log.n_sites() {
        let arrows = log.arrows(site);
        let keep = arrows.partition_point(|&(t, _)| t <= t_max);
        events.extend(arrows[..keep].iter().map(|&(t, s)| (t, site as u32, 0u8, s)));
        let marks = log.mutations(site);
        let keep = marks.partition_point(|&(t, _)| t <= t_max);
        events.extend(marks[..keep].iter().map(|&(t, m)| (t, site as u32, 1u8, m)));
    }
    events.sort_unstable_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .expect("event times are finite")
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut xi = xi0.clone();
    let mut out = Vec::with_capacity(times.len());
    let mut next = 0;
    for &(time, site, kind, payload) in &events {
        while next < times.len() && times[next] < time {
            out.push(xi.clone());
            next += 1;
        }
        match kind {
            0 => xi[site as usize] = xi[payload as usize],
            _ => xi[site as usize] = payload,
        }
    }
    while next < times.len() {
        out.push(xi.clone());
        next += 1;
    }
    Ok(out)
}

/// Configuration at a single time.
pub fn forward_voter(log: &EventLog, xi0: &Configuration, t: f64) -> Result<Configuration> {
    Ok(forward_voter_grid(log, xi0, &[t])?.pop().expect("one query time"))
}

/// Ancestral walk of a site, traced backward through the arrows, with the
/// first mutation mark covered by the walk.
///
/// Dual time `s` runs from 0 at the query time back to `window` at forward
/// time zero.  `steps` lists `(s, site)` entries: the walk sits at `site`
/// from that dual time until the next entry.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPath {
    window: f64,
    steps: Vec<(f64, usize)>,
    first_mutation: Option<(f64, u32)>,
}

impl DualPath {
    pub fn window(&self) -> f64 {
        self.window
    }

    pub fn steps(&self) -> &[(f64, usize)] {
        &self.steps
    }

    pub fn start_site(&self) -> usize {
        self.steps[0].1
    }

    /// Site occupied at dual time `s`.
    pub fn site_at(&self, s: f64) -> usize {
        let idx = self.steps.partition_point(|&(step, _)| step <= s);
        self.steps[idx - 1].1
    }

    /// Site at forward time zero.
    pub fn endpoint(&self) -> usize {
        self.steps.last().expect("path has a start").1
    }

    /// Dual time and type of the first mutation mark on the walk, if any.
    pub fn first_mutation(&self) -> Option<(f64, u32)> {
        self.first_mutation
    }
}

/// Trace the ancestral walk of `(site, t)` down to forward time zero.
pub fn backward_dual(log: &EventLog, site: usize, t: f64) -> Result<DualPath> {
    if site >= log.n_sites() {
        return Err(Error::InvalidInput(format!("site {site} outside the log")));
    }
    if !(0.0..=log.horizon()).contains(&t) {
        return Err(Error::OutOfRange(format!(
            "query time {t} outside the log window [0, {}]",
            log.horizon()
        )));
    }
    let mut steps = vec![(0.0, site)];
    let mut first_mutation = None;
    let mut current = site;
    // forward time below which the walk's history continues; the first
    // interval includes events at exactly t, later ones are strict
    let mut upper = t;
    let mut inclusive = true;
    loop {
        let arrows = log.arrows(current);
        let idx = if inclusive {
            arrows.partition_point(|&(u, _)| u <= upper)
        } else {
            arrows.partition_point(|&(u, _)| u < upper)
        };
        let lower = if idx == 0 { 0.0 } else { arrows[idx - 1].0 };
        if first_mutation.is_none() {
            let marks = log.mutations(current);
            let hi = if inclusive {
                marks.partition_point(|&(v, _)| v <= upper)
            } else {
                marks.partition_point(|&(v, _)| v < upper)
            };
            // marks in (lower, upper]; the latest one is hit first going down
            if hi > 0 && marks[hi - 1].0 > lower {
                let (v, mark) = marks[hi - 1];
                first_mutation = Some((t - v, mark));
            }
        }
        if idx == 0 {
            break;
        }
        let (u, target) = arrows[idx - 1];
        current = target as usize;
        steps.push((t - u, current));
        upper = u;
        inclusive = false;
    }
    Ok(DualPath { window: t, steps, first_mutation })
}

/// Dual time at which two walks from the same log first share a site, if
/// they do within the window.
pub fn dual_meeting_time(a: &DualPath, b: &DualPath) -> Option<f64> {
    let (mut ia, mut ib) = (0usize, 0usize);
    let (sa, sb) = (a.steps(), b.steps());
    let (mut pos_a, mut pos_b) = (sa[0].1, sb[0].1);
    if pos_a == pos_b {
        return Some(0.0);
    }
    loop {
        let next_a = sa.get(ia + 1).map(|&(s, _)| s);
        let next_b = sb.get(ib + 1).map(|&(s, _)| s);
        let s = match (next_a, next_b) {
            (None, None) => return None,
            (Some(s), None) => {
                ia += 1;
                pos_a = sa[ia].1;
                s
            }
            (None, Some(s)) => {
                ib += 1;
                pos_b = sb[ib].1;
                s
            }
            (Some(x), Some(y)) => {
                if x <= y {
                    ia += 1;
                    pos_a = sa[ia].1;
                }
                if y <= x {
                    ib += 1;
                    pos_b = sb[ib].1;
                }
                x.min(y)
            }
        };
        if pos_a == pos_b {
            return Some(s);
        }
    }
}

/// Verify the pathwise correspondence on one log: at every site the forward
/// type equals the mutant mark when the backward walk covers one, and the
/// initial type at the walk's endpoint otherwise.
pub fn duality_check(log: &EventLog, xi0: &Configuration, t: f64) -> Result<bool> {
    let forward = forward_voter(log, xi0, t)?;
    for site in 0..log.n_sites() {
        let dual = backward_dual(log, site, t)?;
        let expected = match dual.first_mutation() {
            Some((_, mark)) => mark,
            None => xi0[dual.endpoint()],
        };
        if forward[site] != expected {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Two-site comparison of the voter pair law with the ancestral-walk pair
/// law, against the explicit mutation-window bound.
#[derive(Debug, Clone, Copy)]
pub struct DualityGap {
    /// `|E[f(xi_t(x), xi_t(y))] - E[f(xi_0 at the two walk endpoints)]|`.
    pub lhs: f64,
    pub lhs_se: f64,
    /// `(1 - e^{-2 mu(1) t}) P(M > t) + 2 mu(1) E[min(M, t)]` with `M` the
    /// walks' meeting time.
    pub rhs: f64,
    pub rhs_se: f64,
    pub replicas: usize,
}

/// Estimate both sides of the pair-correlation bound on coupled logs.
///
/// The pair function must vanish on the diagonal and be bounded by one.
/// Each replica draws one log, reads the forward pair at `t`, and traces the
/// two ancestral walks to get the endpoint pair and their meeting time; the
/// meeting-time terms of the bound are computed from the same walks.
#[allow(clippy::too_many_arguments)]
pub fn duality_gap_bound(
    kernel: &Kernel,
    mu: &MutationMeasure,
    xi0: &Configuration,
    x: usize,
    y: usize,
    f: &crate::generators::PairTestFunction,
    t: f64,
    replicas: usize,
    seed: u64,
) -> Result<DualityGap> {
    let n = kernel.n();
    if x >= n || y >= n {
        return Err(Error::InvalidInput(format!("sites ({x}, {y}) outside 0..{n}")));
    }
    if xi0.len() != n {
        return Err(Error::InvalidInput("configuration does not cover the sites".into()));
    }
    if replicas < 10_000 {
        return Err(Error::InvalidInput(format!(
            "gap estimation needs at least 10000 replicas, got {replicas}"
        )));
    }
    let m = f.n_types();
    for s in 0..m {
        if f.value(s, s) != 0.0 {
            return Err(Error::InvalidInput("pair function must vanish on the diagonal".into()));
        }
        for u in 0..m {
            if f.value(s, u).abs() > 1.0 {
                return Err(Error::InvalidInput("pair function must be bounded by one".into()));
            }
        }
    }
    let theta = mu.total();
    let mix_factor = 1.0 - (-2.0 * theta * t).exp();
    let mut diffs = Vec::with_capacity(replicas);
    let mut bounds = Vec::with_capacity(replicas);
    for r in 0..replicas {
        let log = generate_log(kernel, mu, t.max(f64::MIN_POSITIVE), mix(seed, r as u64))?;
        let forward = forward_voter(&log, xi0, t)?;
        let dual_x = backward_dual(&log, x, t)?;
        let dual_y = backward_dual(&log, y, t)?;
        let walk_pair =
            f.value(xi0[dual_x.endpoint()] as usize, xi0[dual_y.endpoint()] as usize);
        let voter_pair = f.value(forward[x] as usize, forward[y] as usize);
        diffs.push(voter_pair - walk_pair);
        let met = dual_meeting_time(&dual_x, &dual_y);
        let tail = if met.is_none() { 1.0 } else { 0.0 };
        let clipped = met.unwrap_or(t).min(t);
        bounds.push(mix_factor * tail + 2.0 * theta * clipped);
    }
    let diff = MeanSe::from_samples(&diffs);
    let bound = MeanSe::from_samples(&bounds);
    Ok(DualityGap {
        lhs: diff.mean.abs(),
        lhs_se: diff.se,
        rhs: bound.mean,
        rhs_se: bound.se,
        replicas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::PairTestFunction;
    use crate::kernel::GraphFamily;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::Rng;

    fn small_kernel(seed: u64, n: usize) -> Kernel {
        Kernel::from_family(&GraphFamily::WeightedEr { n, p: 0.7, seed }).unwrap()
    }

    fn random_mu(rng: &mut impl Rng, m: usize, total: f64) -> MutationMeasure {
        if total == 0.0 {
            return MutationMeasure::zero(m);
        }
        let raw: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
        let sum: f64 = raw.iter().sum();
        MutationMeasure::new(raw.iter().map(|w| w * total / sum).collect()).unwrap()
    }

    #[test]
    fn zero_mutation_rate_leaves_no_marks() {
        let kernel = small_kernel(1, 6);
        let log = generate_log(&kernel, &MutationMeasure::zero(3), 5.0, 11).unwrap();
        assert!((0..6).all(|x| log.mutations(x).is_empty()));
    }

    #[test]
    fn arrow_counts_have_the_poisson_mean() {
        let kernel = Kernel::complete(3).unwrap();
        let mu = MutationMeasure::zero(2);
        let replicas = 10_000usize;
        let total: usize = (0..replicas)
            .map(|r| generate_log(&kernel, &mu, 10.0, r as u64).unwrap().arrows(0).len())
            .sum();
        let mean = total as f64 / replicas as f64;
        let band = 5.0 * (10.0f64 / replicas as f64).sqrt();
        assert!((mean - 10.0).abs() < band, "mean arrow count {mean}");
    }

    #[test]
    fn equal_seeds_give_identical_logs() {
        let kernel = small_kernel(2, 5);
        let mut rng = substream(3, domain::INIT, 0);
        let mu = random_mu(&mut rng, 3, 0.8);
        let a = generate_log(&kernel, &mu, 4.0, 99).unwrap();
        let b = generate_log(&kernel, &mu, 4.0, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn generation_refuses_oversized_windows() {
        let kernel = Kernel::complete(100).unwrap();
        let mu = MutationMeasure::zero(2);
        assert!(matches!(
            generate_log(&kernel, &mu, 1e7, 0),
            Err(Error::SizeGuard(_))
        ));
    }

    #[test]
    fn quiet_windows_leave_the_configuration_alone() {
        let kernel = small_kernel(4, 5);
        let log = generate_log(&kernel, &MutationMeasure::zero(2), 2.0, 7).unwrap();
        let first_event = (0..5)
            .filter_map(|x| log.arrows(x).first().map(|&(t, _)| t))
            .fold(f64::INFINITY, f64::min);
        let xi0 = vec![0, 1, 0, 1, 1];
        let xi = forward_voter(&log, &xi0, 0.5 * first_event).unwrap();
        assert_eq!(xi, xi0);
        assert_eq!(forward_voter(&log, &xi0, 0.0).unwrap(), xi0);
    }

    #[test]
    fn one_arrow_copies_one_type() {
        let log = EventLog::from_parts(
            1.0,
            0,
            vec![vec![(0.3, 1)], vec![], vec![]],
            vec![vec![], vec![], vec![]],
        )
        .unwrap();
        let xi0 = vec![0, 2, 1];
        assert_eq!(forward_voter(&log, &xi0, 0.2).unwrap(), vec![0, 2, 1]);
        assert_eq!(forward_voter(&log, &xi0, 0.5).unwrap(), vec![2, 2, 1]);
        let dual = backward_dual(&log, 0, 0.5).unwrap();
        assert_eq!(dual.endpoint(), 1);
        assert_eq!(dual.first_mutation(), None);
        assert_eq!(dual.steps(), &[(0.0, 0), (0.2, 1)]);
    }

    #[test]
    fn consensus_is_absorbing_without_mutation() {
        let kernel = small_kernel(5, 6);
        let log = generate_log(&kernel, &MutationMeasure::zero(3), 3.0, 13).unwrap();
        let xi0 = vec![2; 6];
        for t in [0.5, 1.5, 3.0] {
            assert_eq!(forward_voter(&log, &xi0, t).unwrap(), xi0);
        }
    }

    #[test]
    fn queries_beyond_the_horizon_fail() {
        let kernel = small_kernel(6, 4);
        let log = generate_log(&kernel, &MutationMeasure::zero(2), 1.0, 0).unwrap();
        let xi0 = vec![0; 4];
        assert!(matches!(
            forward_voter(&log, &xi0, 1.5),
            Err(Error::OutOfRange(_))
        ));
        assert!(matches!(backward_dual(&log, 0, 1.5), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn forward_and_backward_types_agree_everywhere() {
        let mut rng = substream(21, domain::INIT, 0);
        for round in 0..300u64 {
            let n = rng.random_range(2..=8);
            let kernel = small_kernel(round, n);
            let m = rng.random_range(1..=3);
            let theta = if round % 3 == 0 { 0.0 } else { rng.random::<f64>() };
            let mu = random_mu(&mut rng, m, theta);
            let t = rng.random::<f64>() * 5.0;
            let log = generate_log(&kernel, &mu, t.max(1e-3), round ^ 0xabcd).unwrap();
            let xi0: Configuration = (0..n).map(|_| rng.random_range(0..m) as u32).collect();
            assert!(duality_check(&log, &xi0, t.min(log.horizon())).unwrap());
        }
    }

    #[test]
    fn walk_endpoints_read_initial_types_without_mutation() {
        let kernel = small_kernel(30, 6);
        let log = generate_log(&kernel, &MutationMeasure::zero(4), 2.5, 17).unwrap();
        let mut rng = substream(30, domain::INIT, 1);
        let xi0: Configuration = (0..6).map(|_| rng.random_range(0..4)).collect();
        let forward = forward_voter(&log, &xi0, 2.5).unwrap();
        for site in 0..6 {
            let dual = backward_dual(&log, site, 2.5).unwrap();
            assert_eq!(dual.first_mutation(), None);
            assert_eq!(forward[site], xi0[dual.endpoint()]);
        }
    }

    #[test]
    fn one_mark_sets_the_gap_and_type() {
        let log = EventLog::from_parts(
            1.0,
            0,
            vec![vec![], vec![]],
            vec![vec![(0.3, 2)], vec![]],
        )
        .unwrap();
        let dual = backward_dual(&log, 0, 1.0).unwrap();
        let (gap, mark) = dual.first_mutation().unwrap();
        assert!((gap - 0.7).abs() < 1e-15);
        assert_eq!(mark, 2);
        assert_eq!(forward_voter(&log, &vec![0, 0], 1.0).unwrap(), vec![2, 0]);
    }

    #[test]
    fn walk_marginal_matches_the_semigroup() {
        let kernel = small_kernel(31, 5);
        let t = 0.7;
        let row = kernel.semigroup(t).unwrap().row(2).to_owned();
        let mu = MutationMeasure::zero(2);
        let mut counts = vec![0usize; 5];
        let replicas = 100_000;
        for r in 0..replicas {
            let log = generate_log(&kernel, &mu, t, r as u64).unwrap();
            counts[backward_dual(&log, 2, t).unwrap().endpoint()] += 1;
        }
        let tv: f64 = counts
            .iter()
            .zip(row.iter())
            .map(|(&c, &p)| (c as f64 / replicas as f64 - p).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.01, "TV distance {tv}");
    }

    #[test]
    fn reachable_types_stay_within_initial_and_mutant_types() {
        let kernel = small_kernel(32, 6);
        let mu = MutationMeasure::new(vec![0.5, 0.0, 0.0]).unwrap();
        let log = generate_log(&kernel, &mu, 4.0, 23).unwrap();
        let xi0 = vec![1; 6];
        let grid: Vec<f64> = (0..=8).map(|i| 0.5 * i as f64).collect();
        for xi in forward_voter_grid(&log, &xi0, &grid).unwrap() {
            assert!(xi.iter().all(|&v| v == 0 || v == 1));
        }
    }

    #[test]
    fn no_types_appear_without_mutation() {
        let mut rng = substream(33, domain::INIT, 0);
        for round in 0..40u64 {
            let n = rng.random_range(2..=7);
            let kernel = small_kernel(round + 100, n);
            let log = generate_log(&kernel, &MutationMeasure::zero(4), 3.0, round).unwrap();
            let xi0: Configuration = (0..n).map(|_| rng.random_range(0..4)).collect();
            let xi = forward_voter(&log, &xi0, 3.0).unwrap();
            assert!(xi.iter().all(|v| xi0.contains(v)));
        }
    }

    #[test]
    fn grid_scan_agrees_with_single_queries() {
        let kernel = small_kernel(34, 5);
        let mut rng = substream(34, domain::INIT, 0);
        let mu = random_mu(&mut rng, 3, 0.6);
        let log = generate_log(&kernel, &mu, 3.0, 3).unwrap();
        let xi0 = vec![0, 1, 2, 1, 0];
        let grid = [0.0, 0.4, 1.1, 2.9];
        let scanned = forward_voter_grid(&log, &xi0, &grid).unwrap();
        for (i, &t) in grid.iter().enumerate() {
            assert_eq!(scanned[i], forward_voter(&log, &xi0, t).unwrap());
        }
    }

    #[test]
    fn binary_dump_round_trips() {
        let kernel = small_kernel(35, 6);
        let mut rng = substream(35, domain::INIT, 0);
        let mu = random_mu(&mut rng, 3, 1.2);
        let log = generate_log(&kernel, &mu, 2.0, 77).unwrap();
        let mut blob = Vec::new();
        log.write_binary(&mut blob).unwrap();
        let back = EventLog::read_binary(blob.as_slice()).unwrap();
        assert_eq!(log, back);
        let mut bad = blob.clone();
        bad[0] = b'X';
        assert!(matches!(
            EventLog::read_binary(bad.as_slice()),
            Err(Error::Serialization(_))
        ));
    }

    fn bounded_pair(m: usize, rng: &mut impl Rng) -> PairTestFunction {
        let mut values = Array2::zeros((m, m));
        for s in 0..m {
            for u in 0..m {
                if s != u {
                    values[[s, u]] = rng.random::<f64>() * 2.0 - 1.0;
                }
            }
        }
        PairTestFunction::new(values).unwrap()
    }

    #[test]
    fn gap_sides_vanish_without_mutation() {
        let kernel = small_kernel(36, 5);
        let mut rng = substream(36, domain::INIT, 0);
        let f = bounded_pair(3, &mut rng);
        let xi0 = vec![0, 1, 2, 0, 1];
        let gap = duality_gap_bound(
            &kernel,
            &MutationMeasure::zero(3),
            &xi0,
            0,
            3,
            &f,
            1.0,
            10_000,
            5,
        )
        .unwrap();
        assert_eq!(gap.lhs, 0.0);
        assert_eq!(gap.rhs, 0.0);
    }

    #[test]
    fn gap_bound_dominates_the_estimate() {
        let mut rng = substream(37, domain::INIT, 0);
        for (round, t) in [(0u64, 0.5), (1, 2.0), (2, 0.5), (3, 2.0)] {
            let kernel = small_kernel(round + 40, 5);
            let mu = random_mu(&mut rng, 3, 0.2);
            let xi0: Configuration = (0..5).map(|_| rng.random_range(0..3)).collect();
            let f = bounded_pair(3, &mut rng);
            let gap =
                duality_gap_bound(&kernel, &mu, &xi0, 0, 4, &f, t, 10_000, round).unwrap();
            let slack = 4.0 * (gap.lhs_se + gap.rhs_se);
            assert!(
                gap.lhs <= gap.rhs + slack,
                "t={t}: lhs {} vs rhs {} (slack {slack})",
                gap.lhs,
                gap.rhs
            );
        }
    }

    #[test]
    fn coincident_query_sites_have_zero_gap() {
        let kernel = small_kernel(38, 5);
        let mut rng = substream(38, domain::INIT, 0);
        let mu = random_mu(&mut rng, 3, 0.5);
        let f = bounded_pair(3, &mut rng);
        let xi0 = vec![0, 1, 2, 0, 1];
        let gap = duality_gap_bound(&kernel, &mu, &xi0, 2, 2, &f, 1.0, 10_000, 9).unwrap();
        assert_eq!(gap.lhs, 0.0);
    }

    #[test]
    fn gap_estimation_validates_its_inputs() {
        let kernel = small_kernel(39, 4);
        let mu = MutationMeasure::zero(2);
        let xi0 = vec![0, 1, 0, 1];
        let mut rng = substream(39, domain::INIT, 0);
        let good = bounded_pair(2, &mut rng);
        let mut diag = Array2::zeros((2, 2));
        diag[[0, 0]] = 0.5;
        let bad_diag = PairTestFunction::new(diag).unwrap();
        let mut big = Array2::zeros((2, 2));
        big[[0, 1]] = 1.5;
        let bad_size = PairTestFunction::new(big).unwrap();
        assert!(duality_gap_bound(&kernel, &mu, &xi0, 0, 1, &bad_diag, 1.0, 10_000, 0).is_err());
        assert!(duality_gap_bound(&kernel, &mu, &xi0, 0, 1, &bad_size, 1.0, 10_000, 0).is_err());
        assert!(duality_gap_bound(&kernel, &mu, &xi0, 0, 1, &good, 1.0, 5_000, 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(30))]
        #[test]
        fn replays_are_deterministic(seed in 0u64..1 << 48, t in 0.05f64..3.0) {
            let kernel = Kernel::complete(5).unwrap();
            let mut rng = substream(seed, domain::INIT, 0);
            let mu = random_mu(&mut rng, 3, 0.4);
            let log = generate_log(&kernel, &mu, 3.0, seed).unwrap();
            let xi0: Configuration = (0..5).map(|_| rng.random_range(0..3)).collect();
            let a = forward_voter(&log, &xi0, t).unwrap();
            let b = forward_voter(&log, &xi0, t).unwrap();
            prop_assert_eq!(&a, &b);
            let da = backward_dual(&log, 3, t).unwrap();
            let db = backward_dual(&log, 3, t).unwrap();
            prop_assert_eq!(da, db);
        }
    }
}
