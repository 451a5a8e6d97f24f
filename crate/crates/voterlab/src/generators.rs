//! Generator actions on test functions of the empirical type measure.
//!
//! For a product function `phi(lambda) = prod_i <f_i, lambda>` the voter part
//! of the generator collapses, after stationarity cancels the singleton
//! terms, to a sum over factor subsets `A` with `|A| >= 2`:
//!
//! ```text
//! sum_{|A|>=2} phi_{A^c}(m(xi)) sum_{x,y} pi(x)^|A| q(x,y) prod_{i in A} [f_i(xi(y)) - f_i(xi(x))]
//! ```
//!
//! and the mutation part keeps every nonempty `A` with the integral against
//! the mutation measure in place of the neighbour difference.  Pair averages
//! `F_f(xi) = sum_{x,y} pi(x) pi(y) f(xi(x), xi(y))` get the analogous
//! squared-mass displays.  Everything here is an exact finite sum; the
//! brute-force generator [`l_brute`] evaluates the jump definition directly
//! and serves as the oracle the closed displays are tested against.

use ndarray::Array2;

use crate::kernel::Kernel;
use crate::measures::{empirical, FiniteMeasure};
use crate::typespace::MutationMeasure;
use crate::{Configuration, Error, Result};

/// Largest number of product factors; subset sums grow as `2^k`.
pub const MAX_FACTORS: usize = 16;

/// Product test function `lambda -> prod_i <f_i, lambda>`, each factor given
/// by its value vector over the types.
#[derive(Debug, Clone)]
pub struct ProductTestFunction {
    factors: Vec<Vec<f64>>,
}

impl ProductTestFunction {
    pub fn new(factors: Vec<Vec<f64>>) -> Result<Self> {
        if factors.is_empty() || factors.len() > MAX_FACTORS {
            return Err(Error::InvalidInput(format!(
                "product function needs between 1 and {MAX_FACTORS} factors"
            )));
        }
        let m = factors[0].len();
        if m == 0 || factors.iter().any(|f| f.len() != m) {
            return Err(Error::InvalidInput("factor value vectors must share a length".into()));
        }
        if factors.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("factor values must be finite".into()));
        }
        Ok(Self { factors })
    }

    pub fn k(&self) -> usize {
        self.factors.len()
    }

    pub fn n_types(&self) -> usize {
        self.factors[0].len()
    }

    pub fn factor(&self, i: usize) -> &[f64] {
        &self.factors[i]
    }

    /// `phi(lambda)`.
    pub fn eval(&self, lambda: &FiniteMeasure) -> f64 {
        self.factors.iter().map(|f| lambda.integrate(f)).product()
    }

    /// Envelope constant for the voter-part bound: over every factor subset
    /// of size at least two, the product of oscillations inside and sup norms
    /// outside.  Multiplies the active-edge mass
    /// `sum_{x,y} pi(x)^2 q(x,y) 1{xi(x) != xi(y)}` in the bound.
    pub fn envelope_constant(&self) -> f64 {
        let k = self.k();
        let sup: Vec<f64> = self
            .factors
            .iter()
            .map(|f| f.iter().fold(0.0f64, |a, v| a.max(v.abs())))
            .collect();
        let osc: Vec<f64> = self
            .factors
            .iter()
            .map(|f| {
                let lo = f.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                hi - lo
            })
            .collect();
        let mut total = 0.0;
        for mask in 0u32..(1 << k) {
            if mask.count_ones() < 2 {
                continue;
            }
            let mut term = 1.0;
            for i in 0..k {
                term *= if mask >> i & 1 == 1 { osc[i] } else { sup[i] };
            }
            total += term;
        }
        total
    }
}

/// Pair test function given by its value matrix over type pairs.
#[derive(Debug, Clone)]
pub struct PairTestFunction {
    values: Array2<f64>,
}

impl PairTestFunction {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.nrows() != values.ncols() {
            return Err(Error::InvalidInput("pair function needs a square value matrix".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("pair function values must be finite".into()));
        }
        Ok(Self { values })
    }

    /// Indicator of type equality; its pair average is the empirical
    /// diversity.
    pub fn match_indicator(m: usize) -> Self {
        Self { values: Array2::eye(m) }
    }

    pub fn n_types(&self) -> usize {
        self.values.nrows()
    }

    pub fn value(&self, s: usize, t: usize) -> f64 {
        self.values[[s, t]]
    }

    /// `F_f(xi)`: the pair average under two independent stationary sites.
    pub fn pair_average(&self, xi: &Configuration, pi: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (x, &a) in xi.iter().enumerate() {
            for (y, &b) in xi.iter().enumerate() {
                acc += pi[x] * pi[y] * self.values[[a as usize, b as usize]];
            }
        }
        acc
    }
}

/// Mutation flow operator applied to one value vector:
/// `tau -> <f, mu> - mu(1) f(tau)`.
pub fn a_mu(mu: &MutationMeasure, f: &[f64]) -> Vec<f64> {
    assert_eq!(mu.len(), f.len());
    let inner: f64 = mu.weights().iter().zip(f).map(|(w, v)| w * v).sum();
    let total = mu.total();
    f.iter().map(|v| inner - total * v).collect()
}

/// Voter part of the generator on a product function.
pub fn l_vm_product(kernel: &Kernel, phi: &ProductTestFunction, xi: &Configuration) -> f64 {
    assert_eq!(xi.len(), kernel.n());
    let k = phi.k();
    let pi = kernel.pi();
    let measure = empirical(xi, pi, phi.n_types());
    let moments: Vec<f64> = (0..k).map(|i| measure.integrate(phi.factor(i))).collect();
    let mut total = 0.0;
    for mask in 0u32..(1 << k) {
        let size = mask.count_ones();
        if size < 2 {
            continue;
        }
        let mut outside = 1.0;
        for (i, m) in moments.iter().enumerate() {
            if mask >> i & 1 == 0 {
                outside *= m;
            }
        }
        if outside == 0.0 {
            continue;
        }
        let mut inner = 0.0;
        for (x, &a) in xi.iter().enumerate() {
            let weight = pi[x].powi(size as i32);
            for (y, &b) in xi.iter().enumerate() {
                if a == b {
                    continue;
                }
                let rate = kernel.rate(x, y);
                if rate == 0.0 {
                    continue;
                }
                let mut diff = 1.0;
                for i in 0..k {
                    if mask >> i & 1 == 1 {
                        let f = phi.factor(i);
                        diff *= f[b as usize] - f[a as usize];
                    }
                }
                inner += weight * rate * diff;
            }
        }
        total += outside * inner;
    }
    total
}

/// Mutation part of the generator on a product function.
pub fn l_mu_product(
    pi: &[f64],
    mu: &MutationMeasure,
    phi: &ProductTestFunction,
    xi: &Configuration,
) -> f64 {
    assert_eq!(xi.len(), pi.len());
    assert_eq!(mu.len(), phi.n_types());
    let k = phi.k();
    let measure = empirical(xi, pi, phi.n_types());
    let moments: Vec<f64> = (0..k).map(|i| measure.integrate(phi.factor(i))).collect();
    let mut total = 0.0;
    for mask in 0u32..(1 << k) {
        let size = mask.count_ones();
        if size < 1 {
            continue;
        }
        let mut outside = 1.0;
        for (i, m) in moments.iter().enumerate() {
            if mask >> i & 1 == 0 {
                outside *= m;
            }
        }
        if outside == 0.0 {
            continue;
        }
        let mut inner = 0.0;
        for (x, &a) in xi.iter().enumerate() {
            let weight = pi[x].powi(size as i32);
            let mut integral = 0.0;
            for (sigma, &w) in mu.weights().iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let mut diff = 1.0;
                for i in 0..k {
                    if mask >> i & 1 == 1 {
                        let f = phi.factor(i);
                        diff *= f[sigma] - f[a as usize];
                    }
                }
                integral += w * diff;
            }
            inner += weight * integral;
        }
        total += outside * inner;
    }
    total
}

/// Voter part on a pair average: only the squared-mass corrections survive
/// stationarity.
pub fn l_vm_pair(kernel: &Kernel, f: &PairTestFunction, xi: &Configuration) -> f64 {
    assert_eq!(xi.len(), kernel.n());
    let pi = kernel.pi();
    let mut total = 0.0;
    for (x, &a) in xi.iter().enumerate() {
        let w = pi[x] * pi[x];
        for (y, &b) in xi.iter().enumerate() {
            let rate = kernel.rate(x, y);
            if rate == 0.0 || a == b {
                continue;
            }
            let (a, b) = (a as usize, b as usize);
            let diagonal = f.value(b, b) - f.value(a, a);
            let cross = f.value(b, a) + f.value(a, b) - 2.0 * f.value(a, a);
            total += w * rate * (diagonal - cross);
        }
    }
    total
}

/// Mutation part on a pair average: diagonal refresh and cross terms at
/// squared mass, plus the product-mass drift.
pub fn l_mu_pair(pi: &[f64], mu: &MutationMeasure, f: &PairTestFunction, xi: &Configuration) -> f64 {
    assert_eq!(xi.len(), pi.len());
    assert_eq!(mu.len(), f.n_types());
    let total_mass = mu.total();
    if total_mass == 0.0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for (x, &a) in xi.iter().enumerate() {
        let w = pi[x] * pi[x];
        let a = a as usize;
        let mut refresh = 0.0;
        let mut cross = 0.0;
        for (sigma, &m) in mu.weights().iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            refresh += m * (f.value(sigma, sigma) - f.value(a, a));
            cross += m * (f.value(a, sigma) + f.value(sigma, a) - 2.0 * f.value(a, a));
        }
        acc += w * (refresh - cross);
    }
    for (x, &a) in xi.iter().enumerate() {
        for (y, &b) in xi.iter().enumerate() {
            let w = pi[x] * pi[y];
            let (a, b) = (a as usize, b as usize);
            let mut drift = 0.0;
            for (sigma, &m) in mu.weights().iter().enumerate() {
                if m == 0.0 {
                    continue;
                }
                drift += m * (f.value(a, sigma) + f.value(sigma, b) - 2.0 * f.value(a, b));
            }
            acc += w * drift;
        }
    }
    acc
}

/// Full generator by enumeration of every voter flip and every mutation:
/// the oracle for the closed displays above.
pub fn l_brute<F: Fn(&Configuration) -> f64>(
    kernel: &Kernel,
    mu: &MutationMeasure,
    functional: F,
    xi: &Configuration,
) -> f64 {
    assert_eq!(xi.len(), kernel.n());
    let base = functional(xi);
    let mut scratch = xi.clone();
    let mut total = 0.0;
    for x in 0..xi.len() {
        for y in 0..xi.len() {
            let rate = kernel.rate(x, y);
            if rate == 0.0 || xi[x] == xi[y] {
                continue;
            }
            scratch[x] = xi[y];
            total += rate * (functional(&scratch) - base);
            scratch[x] = xi[x];
        }
        for (sigma, &w) in mu.weights().iter().enumerate() {
            if w == 0.0 || xi[x] == sigma as u32 {
                continue;
            }
            scratch[x] = sigma as u32;
            total += w * (functional(&scratch) - base);
            scratch[x] = xi[x];
        }
    }
    total
}

/// Limit generator on a product function: resampling across factor pairs
/// plus the mutation flow on each factor.
pub fn l_fv_product(mu: &MutationMeasure, phi: &ProductTestFunction, lambda: &FiniteMeasure) -> f64 {
    assert_eq!(mu.len(), phi.n_types());
    assert_eq!(lambda.len(), phi.n_types());
    let k = phi.k();
    let moments: Vec<f64> = (0..k).map(|i| lambda.integrate(phi.factor(i))).collect();
    let mut total = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            let mut pairing = 0.0;
            for (s, &ws) in lambda.weights().iter().enumerate() {
                if ws == 0.0 {
                    continue;
                }
                for (t, &wt) in lambda.weights().iter().enumerate() {
                    if wt == 0.0 {
                        continue;
                    }
                    let di = phi.factor(i)[s] - phi.factor(i)[t];
                    let dj = phi.factor(j)[s] - phi.factor(j)[t];
                    pairing += ws * wt * di * dj;
                }
            }
            let mut outside = 1.0;
            for (l, m) in moments.iter().enumerate() {
                if l != i && l != j {
                    outside *= m;
                }
            }
            total += 0.5 * pairing * outside;
        }
    }
    for i in 0..k {
        let flow = lambda.integrate(&a_mu(mu, phi.factor(i)));
        let mut outside = 1.0;
        for (l, m) in moments.iter().enumerate() {
            if l != i {
                outside *= m;
            }
        }
        total += flow * outside;
    }
    total
}

/// Active-edge mass `sum_{x,y} pi(x)^2 q(x,y) 1{xi(x) != xi(y)}`, the
/// configuration-dependent factor in the voter-part envelope bound.
pub fn active_edge_mass(kernel: &Kernel, xi: &Configuration) -> f64 {
    let pi = kernel.pi();
    let mut acc = 0.0;
    for (x, &a) in xi.iter().enumerate() {
        for (y, &b) in xi.iter().enumerate() {
            if a != b {
                acc += pi[x] * pi[x] * kernel.rate(x, y);
            }
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{domain, substream};
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    fn random_instance(
        rng: &mut ChaCha8Rng,
        max_sites: usize,
        max_types: usize,
        max_factors: usize,
    ) -> (Kernel, MutationMeasure, ProductTestFunction, Configuration) {
        let n = rng.random_range(2..=max_sites);
        let m = rng.random_range(1..=max_types);
        let k = rng.random_range(1..=max_factors);
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
        let kernel = Kernel::from_rows(rows).unwrap();
        let total: f64 = rng.random::<f64>() * 2.0;
        let raw: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
        let raw_sum: f64 = raw.iter().sum();
        let mu = MutationMeasure::new(raw.iter().map(|w| w * total / raw_sum).collect()).unwrap();
        let factors = (0..k)
            .map(|_| (0..m).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect())
            .collect();
        let phi = ProductTestFunction::new(factors).unwrap();
        let xi: Configuration = (0..n).map(|_| rng.random_range(0..m) as u32).collect();
        (kernel, mu, phi, xi)
    }

    #[test]
    fn closed_displays_match_brute_force_on_random_instances() {
        let mut rng = substream(41, domain::WALK, 0);
        for _ in 0..80 {
            let (kernel, mu, phi, xi) = random_instance(&mut rng, 6, 4, 3);
            let pi = kernel.pi().to_vec();
            let m = phi.n_types();
            let closed = l_vm_product(&kernel, &phi, &xi) + l_mu_product(&pi, &mu, &phi, &xi);
            let brute = l_brute(&kernel, &mu, |c| phi.eval(&empirical(c, &pi, m)), &xi);
            let scale = closed.abs().max(brute.abs()).max(1.0);
            assert!(
                (closed - brute).abs() <= 1e-10 * scale,
                "closed {closed} vs brute {brute}"
            );
        }
    }

    #[test]
    fn single_factor_voter_part_vanishes() {
        let mut rng = substream(42, domain::WALK, 1);
        for _ in 0..20 {
            let (kernel, mu, phi, xi) = random_instance(&mut rng, 6, 4, 1);
            assert_eq!(l_vm_product(&kernel, &phi, &xi), 0.0);
            let pi = kernel.pi().to_vec();
            let measure = empirical(&xi, &pi, phi.n_types());
            let expected = measure.integrate(&a_mu(&mu, phi.factor(0)));
            let got = l_mu_product(&pi, &mu, &phi, &xi);
            assert!((got - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn two_factor_mutation_display_expands_as_expected() {
        // the five-term expansion for k = 2, written out independently
        let mut rng = substream(43, domain::WALK, 2);
        for _ in 0..30 {
            let (kernel, mu, phi, xi) = random_instance(&mut rng, 6, 4, 2);
            if phi.k() != 2 {
                continue;
            }
            let pi = kernel.pi().to_vec();
            let m = phi.n_types();
            let measure = empirical(&xi, &pi, m);
            let (f1, f2) = (phi.factor(0), phi.factor(1));
            let inner = |f: &[f64]| -> f64 { mu.weights().iter().zip(f).map(|(w, v)| w * v).sum() };
            let sq_moment = |f: &[f64]| -> f64 {
                xi.iter()
                    .zip(&pi)
                    .map(|(t, p)| p * p * f[*t as usize])
                    .sum()
            };
            let f1f2: Vec<f64> = f1.iter().zip(f2).map(|(a, b)| a * b).collect();
            let pi_diag: f64 = pi.iter().map(|p| p * p).sum();
            let expected = measure.integrate(&a_mu(&mu, f1)) * measure.integrate(f2)
                + measure.integrate(&a_mu(&mu, f2)) * measure.integrate(f1)
                + pi_diag * inner(&f1f2)
                - inner(f1) * sq_moment(f2)
                - inner(f2) * sq_moment(f1)
                + mu.total() * sq_moment(&f1f2);
            let got = l_mu_product(&pi, &mu, &phi, &xi);
            assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        }
    }

    #[test]
    fn pair_displays_match_brute_force() {
        let mut rng = substream(44, domain::WALK, 3);
        for _ in 0..50 {
            let (kernel, mu, _, xi) = random_instance(&mut rng, 6, 4, 1);
            let m = 4;
            let xi: Configuration = xi.iter().map(|t| t % m as u32).collect();
            let mut values = Array2::zeros((m, m));
            for v in values.iter_mut() {
                *v = rng.random::<f64>() * 2.0 - 1.0;
            }
            let f = PairTestFunction::new(values).unwrap();
            let pi = kernel.pi().to_vec();
            let mu_resized = MutationMeasure::new(
                (0..m).map(|s| mu.weights().get(s).copied().unwrap_or(0.1)).collect(),
            )
            .unwrap();
            let closed = l_vm_pair(&kernel, &f, &xi) + l_mu_pair(&pi, &mu_resized, &f, &xi);
            let brute = l_brute(&kernel, &mu_resized, |c| f.pair_average(c, &pi), &xi);
            let scale = closed.abs().max(brute.abs()).max(1.0);
            assert!(
                (closed - brute).abs() <= 1e-10 * scale,
                "closed {closed} vs brute {brute}"
            );
        }
    }

    #[test]
    fn match_indicator_pair_average_is_diversity() {
        let mut rng = substream(45, domain::WALK, 4);
        let (kernel, _, _, xi) = random_instance(&mut rng, 6, 4, 1);
        let pi = kernel.pi().to_vec();
        let f = PairTestFunction::match_indicator(4);
        let measure = empirical(&xi, &pi, 4);
        assert!((f.pair_average(&xi, &pi) - measure.diversity()).abs() < 1e-14);
    }

    #[test]
    fn voter_part_obeys_the_envelope_bound() {
        let mut rng = substream(46, domain::WALK, 5);
        for _ in 0..60 {
            let (kernel, _, phi, xi) = random_instance(&mut rng, 6, 4, 3);
            let bound = phi.envelope_constant() * active_edge_mass(&kernel, &xi);
            let got = l_vm_product(&kernel, &phi, &xi).abs();
            assert!(got <= bound + 1e-12, "{got} above envelope {bound}");
        }
    }

    #[test]
    fn constant_factors_are_harmonic() {
        let kernel = Kernel::complete(4).unwrap();
        let mu = MutationMeasure::new(vec![0.3, 0.7]).unwrap();
        let phi = ProductTestFunction::new(vec![vec![2.0, 2.0], vec![-1.0, -1.0]]).unwrap();
        let xi = vec![0, 1, 0, 1];
        let pi = kernel.pi().to_vec();
        assert!(l_vm_product(&kernel, &phi, &xi).abs() < 1e-15);
        assert!(l_mu_product(&pi, &mu, &phi, &xi).abs() < 1e-15);
    }

    #[test]
    fn limit_generator_reproduces_sampling_variance() {
        let mut rng = substream(47, domain::WALK, 6);
        for _ in 0..20 {
            let m = 4;
            let f: Vec<f64> = (0..m).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let raw: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
            let total: f64 = raw.iter().sum();
            let lambda = FiniteMeasure::new(raw.iter().map(|w| w / total).collect()).unwrap();
            let phi = ProductTestFunction::new(vec![f.clone(), f.clone()]).unwrap();
            let mu = MutationMeasure::zero(m);
            let got = l_fv_product(&mu, &phi, &lambda);
            let sq: Vec<f64> = f.iter().map(|v| v * v).collect();
            let expected = lambda.integrate(&sq) - lambda.integrate(&f).powi(2);
            assert!((got - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn limit_generator_indicator_variance() {
        let p = 0.3;
        let lambda = FiniteMeasure::new(vec![p, 1.0 - p]).unwrap();
        let ind = vec![1.0, 0.0];
        let phi = ProductTestFunction::new(vec![ind.clone(), ind]).unwrap();
        let mu = MutationMeasure::zero(2);
        assert!((l_fv_product(&mu, &phi, &lambda) - (p - p * p)).abs() < 1e-15);
    }

    #[test]
    fn limit_generator_single_factor_is_mutation_flow() {
        let lambda = FiniteMeasure::new(vec![0.2, 0.5, 0.3]).unwrap();
        let mu = MutationMeasure::new(vec![0.1, 0.0, 0.4]).unwrap();
        let f = vec![1.0, -2.0, 0.5];
        let phi = ProductTestFunction::new(vec![f.clone()]).unwrap();
        let expected = lambda.integrate(&a_mu(&mu, &f));
        assert!((l_fv_product(&mu, &phi, &lambda) - expected).abs() < 1e-15);
    }
}
