//! Systems of coalescing rate-1 q-chains.
//!
//! Walkers move independently as rate-1 jump chains until two share a site,
//! after which their blocks move together.  The module provides the full
//! event-driven system (for block-count hitting times), the specialised pair
//! chain (for meeting times), the meeting-time scale `gamma` both as an exact
//! linear solve and as a Monte-Carlo average, rescaled meeting-tail
//! profiles, and samples of the truncated exponential series that describes
//! the limiting block-count times.
//!
//! Jump selection is keyed to occupied sites, not walker labels, so two
//! systems started from the same site multiset couple exactly under a shared
//! rng stream no matter how labels are assigned.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::kernel::{Kernel, RowSampler};
use crate::linalg::lu_solve;
use crate::rng::exp_rate;
use crate::stats::MeanSe;
use crate::{Error, Result};

/// Sup-norm residual required of the meeting-time linear solve, relative to
/// the solution scale.
pub const MEETING_RESIDUAL_TOL: f64 = 1e-10;

/// Largest number of unknowns the meeting-time solve accepts.
pub const MEETING_SYSTEM_MAX: usize = 1_000_000;

/// Site count up to which the meeting-time system is solved densely.
pub const DIRECT_MEETING_MAX: usize = 32;

/// Default censoring cap for meeting and hitting runs, as a multiple of
/// `gamma`.
pub const CAP_GAMMA_MULTIPLE: f64 = 50.0;

/// Default truncation tolerance for the limiting block-count series.
pub const KINGMAN_TRUNCATION_TOL: f64 = 1e-4;

const EMPTY: usize = usize::MAX;

/// A hitting time from a capped run; censored outcomes carry the cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HittingTime {
    Hit(f64),
    Censored(f64),
}

impl HittingTime {
    /// The observed time, if the event happened before the cap.
    pub fn hit(self) -> Option<f64> {
        match self {
            HittingTime::Hit(t) => Some(t),
            HittingTime::Censored(_) => None,
        }
    }

    /// The time actually spent: the hit time or the cap.
    pub fn value(self) -> f64 {
        match self {
            HittingTime::Hit(t) | HittingTime::Censored(t) => t,
        }
    }

    pub fn is_censored(self) -> bool {
        matches!(self, HittingTime::Censored(_))
    }
}

/// Event-driven system of coalescing walkers.
///
/// Walker labels that have met share a partition block and occupy one site;
/// only the effective walkers (one per block) are simulated.
#[derive(Debug, Clone)]
pub struct CoalescingSystem {
    clock: f64,
    sampler: RowSampler,
    parent: Vec<usize>,
    rank: Vec<u8>,
    block_site: Vec<usize>,
    resident: Vec<usize>,
    occupied: Vec<usize>,
    slot: Vec<usize>,
}

impl CoalescingSystem {
    /// Start one walker per entry of `starts`; labels sharing a start site
    /// are merged immediately.  The initial occupied list is sorted so that
    /// runs depend only on the site multiset, not on label order.
    pub fn new(kernel: &Kernel, starts: &[usize]) -> Result<Self> {
        let n_sites = kernel.n();
        if starts.is_empty() {
            return Err(Error::InvalidInput("need at least one walker".into()));
        }
        if let Some(&s) = starts.iter().find(|&&s| s >= n_sites) {
            return Err(Error::InvalidInput(format!(
                "start site {s} outside 0..{n_sites}"
            )));
        }
        let labels = starts.len();
        let mut system = Self {
            clock: 0.0,
            sampler: kernel.row_sampler(),
            parent: (0..labels).collect(),
            rank: vec![0; labels],
            block_site: vec![EMPTY; labels],
            resident: vec![EMPTY; n_sites],
            occupied: Vec::with_capacity(labels),
            slot: vec![EMPTY; n_sites],
        };
        let mut sites: Vec<usize> = starts.to_vec();
        sites.sort_unstable();
        sites.dedup();
        for (idx, &s) in sites.iter().enumerate() {
            system.occupied.push(s);
            system.slot[s] = idx;
        }
        for (label, &s) in starts.iter().enumerate() {
            if system.resident[s] == EMPTY {
                system.resident[s] = label;
                system.block_site[label] = s;
            } else {
                let root = system.find(system.resident[s]);
                let merged = system.union(root, label);
                system.resident[s] = merged;
                system.block_site[merged] = s;
            }
        }
        Ok(system)
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn block_count(&self) -> usize {
        self.occupied.len()
    }

    /// Current site of a walker label.
    pub fn site_of(&self, label: usize) -> usize {
        self.block_site[self.root(label)]
    }

    /// Whether two labels have coalesced.
    pub fn same_block(&self, a: usize, b: usize) -> bool {
        self.root(a) == self.root(b)
    }

    /// Partition of labels into blocks, each block sorted, blocks ordered by
    /// smallest member.
    pub fn partition(&self) -> Vec<Vec<usize>> {
        let mut by_root: Vec<Vec<usize>> = vec![Vec::new(); self.parent.len()];
        for label in 0..self.parent.len() {
            by_root[self.root(label)].push(label);
        }
        let mut blocks: Vec<Vec<usize>> = by_root.into_iter().filter(|b| !b.is_empty()).collect();
        blocks.sort_by_key(|b| b[0]);
        blocks
    }

    /// Evolve to time `t`, executing every jump and merge on the way.
    pub fn run_until<R: Rng + ?Sized>(&mut self, t: f64, rng: &mut R) -> Result<()> {
        if t < self.clock {
            return Err(Error::OutOfRange(format!(
                "target time {t} behind clock {}",
                self.clock
            )));
        }
        loop {
            let next = self.clock + exp_rate(rng, self.block_count() as f64);
            if next > t {
                self.clock = t;
                return Ok(());
            }
            self.clock = next;
            self.jump(rng);
        }
    }

    /// One jump of a uniformly chosen effective walker; merges on collision.
    fn jump<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let from = self.occupied[rng.random_range(0..self.occupied.len())];
        let to = self.sampler.jump(from, rng);
        if to == from {
            return;
        }
        let mover = self.find(self.resident[from]);
        self.vacate(from);
        if self.resident[to] == EMPTY {
            self.settle(to, mover);
        } else {
            let sitting = self.find(self.resident[to]);
            let merged = self.union(mover, sitting);
            self.resident[to] = merged;
            self.block_site[merged] = to;
        }
    }

    fn vacate(&mut self, site: usize) {
        let idx = self.slot[site];
        let last = *self.occupied.last().expect("vacating an occupied site");
        self.occupied.swap_remove(idx);
        if idx < self.occupied.len() {
            self.slot[last] = idx;
        }
        self.slot[site] = EMPTY;
        self.resident[site] = EMPTY;
    }

    fn settle(&mut self, site: usize, root: usize) {
        self.slot[site] = self.occupied.len();
        self.occupied.push(site);
        self.resident[site] = root;
        self.block_site[root] = site;
    }

    fn root(&self, mut label: usize) -> usize {
        while self.parent[label] != label {
            label = self.parent[label];
        }
        label
    }

    fn find(&mut self, mut label: usize) -> usize {
        while self.parent[label] != label {
            self.parent[label] = self.parent[self.parent[label]];
            label = self.parent[label];
        }
        label
    }

    fn union(&mut self, a: usize, b: usize) -> usize {
        let (a, b) = (self.find(a), self.find(b));
        if a == b {
            return a;
        }
        let (winner, loser) = if self.rank[a] >= self.rank[b] { (a, b) } else { (b, a) };
        self.parent[loser] = winner;
        if self.rank[winner] == self.rank[loser] {
            self.rank[winner] += 1;
        }
        winner
    }
}

/// Meeting time of the two-walker chain started at `x` and `y`, simulated
/// with a prebuilt row sampler.  Censored at `cap`.
pub fn meeting_time_with<R: Rng + ?Sized>(
    sampler: &RowSampler,
    x: usize,
    y: usize,
    rng: &mut R,
    cap: f64,
) -> HittingTime {
    if x == y {
        return HittingTime::Hit(0.0);
    }
    let (mut a, mut b) = (x, y);
    let mut clock = 0.0;
    loop {
        let next = clock + exp_rate(rng, 2.0);
        if next > cap {
            return HittingTime::Censored(cap);
        }
        clock = next;
        if rng.random::<f64>() < 0.5 {
            a = sampler.jump(a, rng);
        } else {
            b = sampler.jump(b, rng);
        }
        if a == b {
            return HittingTime::Hit(clock);
        }
    }
}

/// Meeting time of the walkers started at `x` and `y`, censored at `cap`.
pub fn meeting_time_sample<R: Rng + ?Sized>(
    kernel: &Kernel,
    x: usize,
    y: usize,
    rng: &mut R,
    cap: f64,
) -> Result<HittingTime> {
    let n = kernel.n();
    if x >= n || y >= n {
        return Err(Error::InvalidInput(format!("sites ({x}, {y}) outside 0..{n}")));
    }
    if !(cap > 0.0) {
        return Err(Error::InvalidInput("censoring cap must be positive".into()));
    }
    Ok(meeting_time_with(&kernel.row_sampler(), x, y, rng, cap))
}

/// Expected meeting times `h(x, y)` for every ordered start pair, with the
/// diagonal absorbing: for distinct sites,
/// `2 h(x,y) - sum_z q(x,z) h(z,y) - sum_z q(y,z) h(x,z) = 1`.
///
/// Solved densely for small site counts, by conjugate gradients in the
/// stationary-product inner product for reversible kernels, and by damped
/// sweeps otherwise.  The sup-norm residual is verified against
/// [`MEETING_RESIDUAL_TOL`].
pub fn meeting_expectations(kernel: &Kernel) -> Result<Array2<f64>> {
    let n = kernel.n();
    if n * n > MEETING_SYSTEM_MAX {
        return Err(Error::SizeGuard(format!(
            "meeting-time system has {} unknowns; estimate gamma with gamma_mc instead",
            n * n
        )));
    }
    let h = if n <= DIRECT_MEETING_MAX {
        meeting_solve_dense(kernel)?
    } else if kernel.is_reversible() {
        meeting_solve_cg(kernel)?
    } else {
        meeting_solve_sweeps(kernel)?
    };
    let scale = h.iter().fold(1.0f64, |m, &v| m.max(v.abs()));
    let resid = meeting_residual_sup(kernel, &h);
    if resid > MEETING_RESIDUAL_TOL * scale {
        return Err(Error::NoConvergence(format!(
            "meeting-time solve residual {resid:.3e} exceeds tolerance"
        )));
    }
    Ok(h)
}

/// Expected meeting time from independent stationary starts:
/// `gamma = sum_{x,y} pi(x) pi(y) h(x,y)`.
pub fn gamma_exact(kernel: &Kernel) -> Result<f64> {
    let h = meeting_expectations(kernel)?;
    let pi = kernel.pi();
    let mut gamma = 0.0;
    for x in 0..kernel.n() {
        for y in 0..kernel.n() {
            gamma += pi[x] * pi[y] * h[[x, y]];
        }
    }
    Ok(gamma)
}

/// Monte-Carlo `gamma`: average meeting time over stationary product starts.
/// Coincident starts contribute zero and are kept in the average.
pub fn gamma_mc<R: Rng + ?Sized>(kernel: &Kernel, replicas: usize, rng: &mut R) -> Result<MeanSe> {
    if replicas < 1000 {
        return Err(Error::InvalidInput(format!(
            "gamma_mc needs at least 1000 replicas, got {replicas}"
        )));
    }
    let sampler = kernel.row_sampler();
    let site_law = crate::rng::AliasTable::new(kernel.pi());
    let mut samples = Vec::with_capacity(replicas);
    for _ in 0..replicas {
        let x = site_law.sample(rng);
        let y = site_law.sample(rng);
        let m = meeting_time_with(&sampler, x, y, rng, f64::INFINITY);
        samples.push(m.hit().expect("uncapped meeting run"));
    }
    Ok(MeanSe::from_samples(&samples))
}

/// One row of a rescaled meeting-tail profile.
#[derive(Debug, Clone, Copy)]
pub struct TailRow {
    pub t: f64,
    /// Estimate of `2 gamma pi_diag P(M > gamma t)`.
    pub tail: MeanSe,
    /// Estimate of the running integral of the rescaled tail up to `t`.
    pub integral: MeanSe,
}

/// Rescaled meeting-tail estimates over a time grid, from stationary
/// neighbour-pair starts.  The integral column accumulates the tail in time
/// and is the form that tends to `1 - e^{-t}`.
pub fn meeting_tail_profile<R: Rng + ?Sized>(
    kernel: &Kernel,
    gamma: f64,
    t_grid: &[f64],
    replicas: usize,
    rng: &mut R,
) -> Result<Vec<TailRow>> {
    if t_grid.is_empty() || replicas < 2 {
        return Err(Error::InvalidInput("tail profile needs a time grid and replicas".into()));
    }
    if t_grid.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(Error::InvalidInput("tail grid times must be nonnegative".into()));
    }
    let t_max = t_grid.iter().cloned().fold(0.0f64, f64::max);
    let cap = gamma * t_max + 1.0;
    let pair_law = kernel.pair_sampler();
    let sampler = kernel.row_sampler();
    let scale = 2.0 * gamma * kernel.pi_diag();
    let mut meetings = Vec::with_capacity(replicas);
    for _ in 0..replicas {
        let (x, y) = pair_law.sample(rng);
        meetings.push(meeting_time_with(&sampler, x, y, rng, cap).value());
    }
    let mut rows = Vec::with_capacity(t_grid.len());
    let mut tail_obs = vec![0.0; replicas];
    let mut int_obs = vec![0.0; replicas];
    for &t in t_grid {
        let cut = gamma * t;
        for (i, &m) in meetings.iter().enumerate() {
            tail_obs[i] = if m > cut { scale } else { 0.0 };
            int_obs[i] = 2.0 * kernel.pi_diag() * m.min(cut);
        }
        rows.push(TailRow {
            t,
            tail: MeanSe::from_samples(&tail_obs),
            integral: MeanSe::from_samples(&int_obs),
        });
    }
    Ok(rows)
}

/// First times the block count of an all-site coalescing run hits each level
/// in `j_list`.  Levels not reached before `cap` come back censored.
pub fn block_hitting_times<R: Rng + ?Sized>(
    kernel: &Kernel,
    j_list: &[usize],
    rng: &mut R,
    cap: f64,
) -> Result<Vec<HittingTime>> {
    let n = kernel.n();
    if let Some(&j) = j_list.iter().find(|&&j| j == 0 || j > n) {
        return Err(Error::InvalidInput(format!("block level {j} outside 1..={n}")));
    }
    let lowest = j_list.iter().copied().min().unwrap_or(n);
    let starts: Vec<usize> = (0..n).collect();
    let mut system = CoalescingSystem::new(kernel, &starts)?;
    let mut hit = vec![f64::NAN; n + 1];
    hit[n] = 0.0;
    while system.block_count() > lowest {
        let before = system.block_count();
        let next = system.clock + exp_rate(rng, before as f64);
        if next > cap {
            break;
        }
        system.clock = next;
        system.jump(rng);
        if system.block_count() < before {
            hit[system.block_count()] = system.clock;
        }
    }
    Ok(j_list
        .iter()
        .map(|&j| {
            if hit[j].is_nan() {
                HittingTime::Censored(cap)
            } else {
                HittingTime::Hit(hit[j])
            }
        })
        .collect())
}

/// One sample of the truncated series `sum_{i>j} Z_i` of independent
/// exponentials with rate `i (i-1) / 2`, truncated so the neglected mean
/// `2/K` is below `truncation_tol`.
pub fn kingman_tail_sample<R: Rng + ?Sized>(
    j: usize,
    rng: &mut R,
    truncation_tol: f64,
) -> Result<f64> {
    if j == 0 {
        return Err(Error::InvalidInput("block level must be at least 1".into()));
    }
    if !(truncation_tol > 0.0) {
        return Err(Error::InvalidInput("truncation tolerance must be positive".into()));
    }
    let k = (2.0 / truncation_tol).floor() as usize + 1;
    let mut total = 0.0;
    for i in (j + 1)..=k {
        let rate = (i * (i - 1)) as f64 / 2.0;
        total += exp_rate(rng, rate);
    }
    Ok(total)
}

fn meeting_residual_sup(kernel: &Kernel, h: &Array2<f64>) -> f64 {
    let q = kernel.q();
    let qh = q.dot(h);
    let hqt = h.dot(&q.t());
    let n = kernel.n();
    let mut worst = 0.0f64;
    for x in 0..n {
        for y in 0..n {
            if x == y {
                continue;
            }
            let r = 2.0 * h[[x, y]] - qh[[x, y]] - hqt[[x, y]] - 1.0;
            worst = worst.max(r.abs());
        }
    }
    worst
}

fn meeting_solve_dense(kernel: &Kernel) -> Result<Array2<f64>> {
    let n = kernel.n();
    let m = n * n - n;
    let index = |x: usize, y: usize| -> usize {
        let row = x * (n - 1);
        row + if y < x { y } else { y - 1 }
    };
    let mut a = Array2::zeros((m, m));
    let b = Array1::from_elem(m, 1.0);
    for x in 0..n {
        for y in 0..n {
            if x == y {
                continue;
            }
            let r = index(x, y);
            a[[r, r]] += 2.0;
            for z in 0..n {
                if z != y {
                    a[[r, index(z, y)]] -= kernel.rate(x, z);
                }
                if z != x {
                    a[[r, index(x, z)]] -= kernel.rate(y, z);
                }
            }
        }
    }
    let sol = lu_solve(&a, &b)?;
    let mut h = Array2::zeros((n, n));
    for x in 0..n {
        for y in 0..n {
            if x != y {
                h[[x, y]] = sol[index(x, y)];
            }
        }
    }
    Ok(h)
}

/// Conjugate gradients on the absorbed pair system, self-adjoint in the
/// `pi (x) pi` inner product when the kernel is reversible.  The operator is
/// applied with two dense multiplications per iteration.
fn meeting_solve_cg(kernel: &Kernel) -> Result<Array2<f64>> {
    let n = kernel.n();
    let q = kernel.q();
    let pi = kernel.pi();
    let apply = |h: &Array2<f64>| -> Array2<f64> {
        let mut out = 2.0 * h - q.dot(h) - h.dot(&q.t());
        for x in 0..n {
            out[[x, x]] = 0.0;
        }
        out
    };
    let dot = |a: &Array2<f64>, b: &Array2<f64>| -> f64 {
        let mut acc = 0.0;
        for x in 0..n {
            for y in 0..n {
                acc += pi[x] * pi[y] * a[[x, y]] * b[[x, y]];
            }
        }
        acc
    };
    let mut b = Array2::from_elem((n, n), 1.0);
    for x in 0..n {
        b[[x, x]] = 0.0;
    }
    let mut h = Array2::zeros((n, n));
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rs = dot(&r, &r);
    for iter in 0..10_000 {
        let ap = apply(&p);
        let denom = dot(&p, &ap);
        if denom <= 0.0 {
            break;
        }
        let alpha = rs / denom;
        h = h + alpha * &p;
        r = r - alpha * &ap;
        if iter % 50 == 49 {
            r = &b - &apply(&h);
        }
        let scale = h.iter().fold(1.0f64, |m, &v| m.max(v.abs()));
        let sup = r.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        if sup <= 0.5 * MEETING_RESIDUAL_TOL * scale {
            return Ok(h);
        }
        let rs_new = dot(&r, &r);
        p = &r + (rs_new / rs) * &p;
        rs = rs_new;
    }
    Err(Error::NoConvergence(
        "conjugate gradients stalled on the meeting-time system".into(),
    ))
}

/// Damped fixed-point sweeps `h <- (q h + h q' + 1) / 2` for large
/// non-reversible kernels.
fn meeting_solve_sweeps(kernel: &Kernel) -> Result<Array2<f64>> {
    let n = kernel.n();
    let q = kernel.q();
    let mut h = Array2::zeros((n, n));
    for _ in 0..200_000 {
        let mut next = (q.dot(&h) + h.dot(&q.t()) + 1.0) / 2.0;
        for x in 0..n {
            next[[x, x]] = 0.0;
        }
        let scale = next.iter().fold(1.0f64, |m, &v| m.max(v.abs()));
        let delta = next
            .iter()
            .zip(h.iter())
            .fold(0.0f64, |m, (&a, &b)| m.max((a - b).abs()));
        h = next;
        if delta <= 0.01 * MEETING_RESIDUAL_TOL * scale {
            return Ok(h);
        }
    }
    Err(Error::NoConvergence(
        "fixed-point sweeps stalled on the meeting-time system".into(),
    ))
}
