//! Irreducible jump kernels on a finite site set.
//!
//! A kernel holds a row-stochastic matrix `q` with zero diagonal together
//! with its stationary distribution, and offers the spectral and mixing
//! diagnostics the convergence experiments feed on: the uniformized
//! semigroup, worst-row total-variation distance from equilibrium, mixing
//! time, conventional and mass-weighted spectral gaps, and the stationary
//! pair sampler that picks a site biased by squared mass and one of its
//! neighbours.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{jacobi_eigenvalues, lu_solve};
use crate::rng::{self, AliasTable};
use crate::{Error, Result};

/// Row-sum and zero-diagonal validation slack.
const ROW_SUM_TOL: f64 = 1e-12;
/// Detailed-balance slack for reversibility checks.
const REVERSIBILITY_TOL: f64 = 1e-12;
/// Stationarity residual every constructed kernel must satisfy.
const STATIONARY_RESIDUAL: f64 = 1e-12;
/// Jacobi eigensolver tolerance for the spectral gaps.
const EIGEN_TOL: f64 = 1e-10;
/// Neglected Poisson tail mass in the uniformized semigroup.
const POISSON_TAIL: f64 = 1e-12;
/// Largest size solved directly for the stationary law; beyond this a lazy
/// power iteration takes over.
const DIRECT_SOLVE_MAX: usize = 2000;
/// Mixing threshold `1/(2e)`.
const MIXING_TARGET: f64 = 1.0 / (2.0 * std::f64::consts::E);
/// Absolute bisection tolerance for the mixing time.
const MIXING_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct Kernel {
    q: Array2<f64>,
    pi: Vec<f64>,
    reversible: bool,
}

/// Serialised form of a [`Kernel`].
#[derive(Debug, Serialize, Deserialize)]
pub struct KernelJson {
    pub n: usize,
    pub rows: Vec<Vec<f64>>,
}

/// Named graph families the experiment configs can ask for.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum GraphFamily {
    Complete { n: usize },
    Cycle { n: usize },
    Torus2d { side: usize },
    WeightedEr { n: usize, p: f64, seed: u64 },
}

/// Both spectral gaps of a reversible kernel.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SpectralGaps {
    /// `1 - lambda_2` of the similarity-symmetrised kernel; governs the
    /// variance decay estimates.
    pub conventional: f64,
    /// Top eigenvalue difference of the symmetric matrix `pi(x) q(x,y)`.
    pub mass_weighted: f64,
}

/// Mixing and scale diagnostics for one kernel, against a meeting-time scale
/// `gamma` supplied by the caller.
#[derive(Debug, Clone, Serialize)]
pub struct MixingReport {
    pub n_sites: usize,
    pub t_mix: f64,
    pub gap_conventional: Option<f64>,
    pub gap_mass_weighted: Option<f64>,
    pub pi_diag: f64,
    pub pi_max: f64,
    pub gamma: f64,
    /// `t_mix / gamma`; vanishing along a family signals fast mixing at the
    /// meeting-time scale.
    pub mixing_ratio: f64,
    /// `log(max(e, gamma * pi_max)) / (gap * gamma)` with the conventional
    /// gap; the reversible alternative to `mixing_ratio`.
    pub relaxation_ratio: Option<f64>,
}

impl Kernel {
    /// Validate a row-stochastic zero-diagonal matrix and compute its
    /// stationary law.
    pub fn from_matrix(mut q: Array2<f64>) -> Result<Self> {
        let n = q.nrows();
        if n < 2 || q.ncols() != n {
            return Err(Error::InvalidInput(format!(
                "kernel must be square with at least 2 sites, got {}x{}",
                n,
                q.ncols()
            )));
        }
        for x in 0..n {
            if q[[x, x]].abs() > ROW_SUM_TOL {
                return Err(Error::InvalidInput(format!("nonzero diagonal at site {x}")));
            }
            q[[x, x]] = 0.0;
            let mut sum = 0.0;
            for y in 0..n {
                let v = q[[x, y]];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "negative or non-finite rate at ({x},{y})"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidInput(format!(
                    "row {x} sums to {sum}, expected 1"
                )));
            }
            for y in 0..n {
                q[[x, y]] /= sum;
            }
        }
        if !strongly_connected(&q) {
            return Err(Error::NotIrreducible);
        }
        let pi = stationary_law(&q)?;
        let mut reversible = true;
        'outer: for x in 0..n {
            for y in x + 1..n {
                if (pi[x] * q[[x, y]] - pi[y] * q[[y, x]]).abs() > REVERSIBILITY_TOL {
                    reversible = false;
                    break 'outer;
                }
            }
        }
        Ok(Self { q, pi, reversible })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidInput("ragged kernel rows".into()));
        }
        let mut q = Array2::zeros((n, n));
        for (x, row) in rows.iter().enumerate() {
            for (y, v) in row.iter().enumerate() {
                q[[x, y]] = *v;
            }
        }
        Self::from_matrix(q)
    }

    pub fn from_family(family: &GraphFamily) -> Result<Self> {
        match *family {
            GraphFamily::Complete { n } => Self::complete(n),
            GraphFamily::Cycle { n } => Self::cycle(n),
            GraphFamily::Torus2d { side } => Self::torus2d(side),
            GraphFamily::WeightedEr { n, p, seed } => Self::weighted_er(n, p, seed, 64),
        }
    }

    /// Uniform jumps to every other site.
    pub fn complete(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidInput("complete graph needs at least 2 sites".into()));
        }
        let w = 1.0 / (n - 1) as f64;
        let mut q = Array2::from_elem((n, n), w);
        for x in 0..n {
            q[[x, x]] = 0.0;
        }
        Self::from_matrix(q)
    }

    /// Symmetric nearest-neighbour walk on a cycle.
    pub fn cycle(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidInput("cycle needs at least 3 sites".into()));
        }
        let mut q = Array2::zeros((n, n));
        for x in 0..n {
            q[[x, (x + 1) % n]] = 0.5;
            q[[x, (x + n - 1) % n]] = 0.5;
        }
        Self::from_matrix(q)
    }

    /// Nearest-neighbour walk on the `side x side` torus.
    pub fn torus2d(side: usize) -> Result<Self> {
        if side < 2 {
            return Err(Error::InvalidInput("torus needs side at least 2".into()));
        }
        let n = side * side;
        let mut q = Array2::zeros((n, n));
        let idx = |r: usize, c: usize| (r % side) * side + (c % side);
        for r in 0..side {
            for c in 0..side {
                let x = idx(r, c);
                for (nr, nc) in [(r + 1, c), (r + side - 1, c), (r, c + 1), (r, c + side - 1)] {
                    q[[x, idx(nr, nc)]] += 0.25;
                }
            }
        }
        Self::from_matrix(q)
    }

    /// Random walk on a weighted Erdos-Renyi graph; resamples until the draw
    /// is connected, giving up after `retries` attempts.
    pub fn weighted_er(n: usize, p: f64, seed: u64, retries: usize) -> Result<Self> {
        if n < 2 || !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidInput("weighted graph needs n >= 2 and p in [0,1]".into()));
        }
        for attempt in 0..retries.max(1) {
            let mut r = rng::substream(seed, rng::domain::INIT, attempt as u64);
            let mut w = Array2::zeros((n, n));
            for i in 0..n {
                for j in i + 1..n {
                    if r.random::<f64>() < p {
                        let weight = 0.5 + r.random::<f64>();
                        w[[i, j]] = weight;
                        w[[j, i]] = weight;
                    }
                }
            }
            let degrees: Vec<f64> = (0..n).map(|i| w.row(i).sum()).collect();
            if degrees.iter().any(|d| *d <= 0.0) || !strongly_connected(&w) {
                continue;
            }
            for i in 0..n {
                for j in 0..n {
                    w[[i, j]] /= degrees[i];
                }
            }
            return Self::from_matrix(w);
        }
        Err(Error::InvalidInput(format!(
            "no connected weighted graph on {n} sites with p={p} within {retries} attempts"
        )))
    }

    pub fn n(&self) -> usize {
        self.q.nrows()
    }

    pub fn q(&self) -> &Array2<f64> {
        &self.q
    }

    pub fn rate(&self, x: usize, y: usize) -> f64 {
        self.q[[x, y]]
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    /// Probability that two independent stationary draws pick the same site.
    pub fn pi_diag(&self) -> f64 {
        self.pi.iter().map(|p| p * p).sum()
    }

    pub fn pi_max(&self) -> f64 {
        self.pi.iter().copied().fold(0.0, f64::max)
    }

    pub fn is_reversible(&self) -> bool {
        self.reversible
    }

    /// Transition probabilities at time `t`, by uniformization: the Poisson
    /// mixture of matrix powers, truncated once the neglected tail mass drops
    /// below `1e-12`, rows renormalised.
    pub fn semigroup(&self, t: f64) -> Result<Array2<f64>> {
        let n = self.n();
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::InvalidInput(format!("semigroup time {t} must be nonnegative")));
        }
        if t == 0.0 {
            return Ok(Array2::eye(n));
        }
        let weights = poisson_weights(t, POISSON_TAIL);
        let mut acc = Array2::eye(n);
        acc *= weights[0];
        let mut power = Array2::eye(n);
        for &w in &weights[1..] {
            power = power.dot(&self.q);
            acc.scaled_add(w, &power);
        }
        for x in 0..n {
            let sum: f64 = acc.row(x).sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::NoConvergence(format!(
                    "semigroup row {x} sums to {sum} before renormalisation"
                )));
            }
            for y in 0..n {
                acc[[x, y]] /= sum;
            }
        }
        Ok(acc)
    }

    /// Worst-row total-variation distance from the stationary law at time `t`.
    pub fn tv_from_equilibrium(&self, t: f64) -> Result<f64> {
        let qt = self.semigroup(t)?;
        let mut worst: f64 = 0.0;
        for x in 0..self.n() {
            let tv: f64 = 0.5
                * (0..self.n())
                    .map(|y| (qt[[x, y]] - self.pi[y]).abs())
                    .sum::<f64>();
            worst = worst.max(tv);
        }
        Ok(worst)
    }

    /// First time the worst-row total-variation distance drops to `1/(2e)`,
    /// bracketed by doubling and bisected to absolute tolerance `1e-6`.
    pub fn mixing_time(&self) -> Result<f64> {
        let mut hi = 1.0;
        let mut lo = 0.0;
        let mut guard = 0;
        while self.tv_from_equilibrium(hi)? > MIXING_TARGET {
            lo = hi;
            hi *= 2.0;
            guard += 1;
            if guard > 60 {
                return Err(Error::NoConvergence("mixing time bracket exceeded 2^60".into()));
            }
        }
        while hi - lo > MIXING_TOL {
            let mid = 0.5 * (lo + hi);
            if self.tv_from_equilibrium(mid)? > MIXING_TARGET {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Conventional and mass-weighted spectral gaps.  Requires detailed
    /// balance; non-reversible kernels are rejected.
    pub fn spectral_gaps(&self) -> Result<SpectralGaps> {
        if !self.reversible {
            return Err(Error::NotReversible);
        }
        let n = self.n();
        let mut sym = Array2::zeros((n, n));
        let mut weighted = Array2::zeros((n, n));
        for x in 0..n {
            for y in 0..n {
                sym[[x, y]] = (self.pi[x] / self.pi[y]).sqrt() * self.q[[x, y]];
                weighted[[x, y]] = self.pi[x] * self.q[[x, y]];
            }
        }
        // scrub the last-bit asymmetry so Jacobi sees exact symmetry
        for x in 0..n {
            for y in x + 1..n {
                let avg = 0.5 * (sym[[x, y]] + sym[[y, x]]);
                sym[[x, y]] = avg;
                sym[[y, x]] = avg;
                let avg_w = 0.5 * (weighted[[x, y]] + weighted[[y, x]]);
                weighted[[x, y]] = avg_w;
                weighted[[y, x]] = avg_w;
            }
        }
        let eig_sym = jacobi_eigenvalues(&sym, EIGEN_TOL)?;
        let eig_weighted = jacobi_eigenvalues(&weighted, EIGEN_TOL)?;
        Ok(SpectralGaps {
            conventional: 1.0 - eig_sym[1],
            mass_weighted: eig_weighted[0] - eig_weighted[1],
        })
    }

    /// Sampler for jump targets out of each site.
    pub fn row_sampler(&self) -> RowSampler {
        let rows = (0..self.n())
            .map(|x| AliasTable::new(self.q.row(x).as_slice().expect("rows are contiguous")))
            .collect();
        RowSampler { rows }
    }

    /// Sampler for the stationary neighbour pair `(V, V')`.
    pub fn pair_sampler(&self) -> PairSampler {
        let n = self.n();
        let mut z = 0.0;
        let mut site_weights = vec![0.0; n];
        for x in 0..n {
            let w: f64 = (0..n).map(|y| self.pi[x] * self.pi[x] * self.q[[x, y]]).sum();
            site_weights[x] = w;
            z += w;
        }
        PairSampler {
            site: AliasTable::new(&site_weights),
            rows: self.row_sampler(),
            z,
        }
    }

    /// Assemble the mixing diagnostics; spectral entries are present only for
    /// reversible kernels.
    pub fn mixing_report(&self, gamma: f64) -> Result<MixingReport> {
        let t_mix = self.mixing_time()?;
        let gaps = if self.reversible {
            Some(self.spectral_gaps()?)
        } else {
            None
        };
        let pi_max = self.pi_max();
        let relaxation_ratio = gaps.map(|g| {
            (std::f64::consts::E.max(gamma * pi_max)).ln() / (g.conventional * gamma)
        });
        Ok(MixingReport {
            n_sites: self.n(),
            t_mix,
            gap_conventional: gaps.map(|g| g.conventional),
            gap_mass_weighted: gaps.map(|g| g.mass_weighted),
            pi_diag: self.pi_diag(),
            pi_max,
            gamma,
            mixing_ratio: t_mix / gamma,
            relaxation_ratio,
        })
    }

    pub fn to_json(&self) -> KernelJson {
        KernelJson {
            n: self.n(),
            rows: (0..self.n())
                .map(|x| (0..self.n()).map(|y| self.q[[x, y]]).collect())
                .collect(),
        }
    }

    pub fn from_json(raw: &KernelJson) -> Result<Self> {
        if raw.rows.len() != raw.n {
            return Err(Error::InvalidInput("kernel row count disagrees with n".into()));
        }
        Self::from_rows(raw.rows.clone())
    }
}

/// Alias tables for jump targets, one per site.
#[derive(Debug, Clone)]
pub struct RowSampler {
    rows: Vec<AliasTable>,
}

impl RowSampler {
    pub fn jump<R: Rng + ?Sized>(&self, from: usize, rng: &mut R) -> usize {
        self.rows[from].sample(rng)
    }
}

/// Samples the stationary pair `(V, V')`: a site with probability
/// proportional to `pi(x)^2`, then one of its neighbours.  `z` is the
/// computed normaliser, which equals the squared-mass sum because rows are
/// stochastic.
#[derive(Debug, Clone)]
pub struct PairSampler {
    site: AliasTable,
    rows: RowSampler,
    z: f64,
}

impl PairSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let v = self.site.sample(rng);
        (v, self.rows.jump(v, rng))
    }

    pub fn normaliser(&self) -> f64 {
        self.z
    }
}

/// Strong connectivity of the support digraph: forward and backward
/// reachability from site 0.
fn strongly_connected(q: &Array2<f64>) -> bool {
    let n = q.nrows();
    let reach = |transpose: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(x) = stack.pop() {
            for y in 0..n {
                let v = if transpose { q[[y, x]] } else { q[[x, y]] };
                if v > 0.0 && !seen[y] {
                    seen[y] = true;
                    count += 1;
                    stack.push(y);
                }
            }
        }
        count == n
    };
    reach(false) && reach(true)
}

/// Stationary row vector of a validated irreducible stochastic matrix.
fn stationary_law(q: &Array2<f64>) -> Result<Vec<f64>> {
    let n = q.nrows();
    let mut pi: Vec<f64> = if n <= DIRECT_SOLVE_MAX {
        // (q^T - I) pi = 0 with the last balance equation swapped for mass 1
        let mut a = Array2::zeros((n, n));
        for x in 0..n {
            for y in 0..n {
                a[[x, y]] = q[[y, x]];
            }
            a[[x, x]] -= 1.0;
        }
        for y in 0..n {
            a[[n - 1, y]] = 1.0;
        }
        let mut b = Array1::zeros(n);
        b[n - 1] = 1.0;
        lu_solve(&a, &b)?.to_vec()
    } else {
        // lazy power iteration; the half-identity mix removes periodicity
        let mut pi = vec![1.0 / n as f64; n];
        let mut next = vec![0.0; n];
        let mut converged = false;
        for _ in 0..200_000 {
            next.iter_mut().for_each(|v| *v = 0.0);
            for x in 0..n {
                let px = pi[x];
                next[x] += 0.5 * px;
                if px > 0.0 {
                    for y in 0..n {
                        next[y] += 0.5 * px * q[[x, y]];
                    }
                }
            }
            let total: f64 = next.iter().sum();
            next.iter_mut().for_each(|v| *v /= total);
            let delta: f64 = pi.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
            std::mem::swap(&mut pi, &mut next);
            if delta < 1e-15 {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NoConvergence("stationary power iteration stalled".into()));
        }
        pi
    };
    // polish until the balance residual is far below the contract
    for _ in 0..200 {
        let residual: f64 = balance_residual(q, &pi);
        if residual <= STATIONARY_RESIDUAL * 0.1 {
            break;
        }
        let mut next = vec![0.0; n];
        for x in 0..n {
            for y in 0..n {
                next[y] += pi[x] * q[[x, y]];
            }
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= total);
        pi = next;
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|v| *v /= total);
    if pi.iter().any(|p| *p <= 0.0) {
        return Err(Error::NoConvergence("stationary law has a nonpositive entry".into()));
    }
    let residual = balance_residual(q, &pi);
    if residual > STATIONARY_RESIDUAL {
        return Err(Error::NoConvergence(format!(
            "stationary residual {residual} above target"
        )));
    }
    Ok(pi)
}

fn balance_residual(q: &Array2<f64>, pi: &[f64]) -> f64 {
    let n = q.nrows();
    let mut residual = 0.0;
    for y in 0..n {
        let flow: f64 = (0..n).map(|x| pi[x] * q[[x, y]]).sum();
        residual += (flow - pi[y]).abs();
    }
    residual
}

/// Normalised Poisson weights covering all but `tail` of the mass.
fn poisson_weights(t: f64, tail: f64) -> Vec<f64> {
    // log-space recursion, then a shifted exponentiation; immune to the
    // underflow of exp(-t) for large t
    let upper = (t + 12.0 * (t + 4.0).sqrt() + 30.0).ceil() as usize;
    let mut log_w = Vec::with_capacity(upper + 1);
    let mut lw = -t;
    log_w.push(lw);
    for k in 1..=upper {
        lw += t.ln() - (k as f64).ln();
        log_w.push(lw);
    }
    let max_lw = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = log_w.iter().map(|l| (l - max_lw).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    let mut acc = 0.0;
    let mut cut = w.len();
    for (k, v) in w.iter().enumerate() {
        acc += v;
        if acc >= 1.0 - tail {
            cut = k + 1;
            break;
        }
    }
    w.truncate(cut);
    let kept: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= kept);
    w
}
