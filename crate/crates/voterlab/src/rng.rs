//! Deterministic stream derivation and discrete sampling helpers.
//!
//! All randomness in the crate flows through ChaCha8 keyed by a single user
//! seed.  Substreams are addressed as `(domain, index)` pairs mapped onto the
//! 64-bit ChaCha stream id as `domain << 56 | index`, so per-site event
//! streams, per-replica runs, and auxiliary draws never overlap and results
//! are bit-reproducible across platforms.  Nested scopes (a replica that owns
//! per-site streams) derive a fresh 64-bit key with SplitMix64 first.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream domain tags.  Values must stay stable: logs written by one build
/// replay identically under another.
pub mod domain {
    pub const ARROWS: u64 = 1;
    pub const MUTATIONS: u64 = 2;
    pub const REPLICA: u64 = 3;
    pub const WALK: u64 = 4;
    pub const INIT: u64 = 5;
}

/// ChaCha8 stream addressed by `(seed, domain, index)`.
///
/// Panics if `index` needs more than 56 bits; site and replica counters stay
/// far below that.
pub fn substream(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    assert!(index < (1 << 56), "substream index overflow");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((domain << 56) | index);
    rng
}

/// SplitMix64 avalanche, used to derive child seeds for nested stream scopes.
pub fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Walker alias table for O(1) draws from a fixed discrete distribution.
#[derive(Debug, Clone)]
pub struct AliasTable {
    prob: Vec<f64>,
    alias: Vec<u32>,
}

impl AliasTable {
    /// Build from nonnegative weights with positive total mass.
    pub fn new(weights: &[f64]) -> Self {
        let n = weights.len();
        assert!(n > 0, "alias table needs at least one weight");
        let total: f64 = weights.iter().sum();
        assert!(
            total > 0.0 && weights.iter().all(|w| *w >= 0.0),
            "alias table needs nonnegative weights with positive total"
        );
        let scale = n as f64 / total;
        let mut prob = vec![0.0; n];
        let mut alias = vec![0u32; n];
        let mut small = Vec::with_capacity(n);
        let mut large = Vec::with_capacity(n);
        let mut scaled: Vec<f64> = weights.iter().map(|w| w * scale).collect();
        for (i, p) in scaled.iter().enumerate() {
            if *p < 1.0 {
                small.push(i);
            } else {
                large.push(i);
            }
        }
        while !small.is_empty() && !large.is_empty() {
            let s = small.pop().unwrap();
            let l = large.pop().unwrap();
            prob[s] = scaled[s];
            alias[s] = l as u32;
            scaled[l] = (scaled[l] + scaled[s]) - 1.0;
            if scaled[l] < 1.0 {
                small.push(l);
            } else {
                large.push(l);
            }
        }
        for i in large.into_iter().chain(small) {
            prob[i] = 1.0;
            alias[i] = i as u32;
        }
        Self { prob, alias }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let n = self.prob.len();
        let i = rng.random_range(0..n);
        if rng.random::<f64>() < self.prob[i] {
            i
        } else {
            self.alias[i] as usize
        }
    }
}

/// Exponential variate with the given rate, inverse-transform sampled so a
/// stream consumes exactly one `f64` per draw.
pub fn exp_rate<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    debug_assert!(rate > 0.0);
    let u: f64 = rng.random();
    -(-u).ln_1p() / rate
}
