//! Categorical-distribution primitives shared by every other module.
//!
//! [`ProbVector`] carries a distribution over `K` categories, [`OneHot`] is
//! the `e_k` encoding of a single category, and [`Rng`] is the seeded,
//! bit-reproducible random source used for all sampling.

use std::ops::Index;

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Most negative entry accepted from closed-form arithmetic.
pub const NEGATIVE_TOLERANCE: f64 = 1e-12;
/// Largest deviation of the total mass from one for a valid vector.
pub const SUM_TOLERANCE: f64 = 1e-10;
/// Largest deviation of the total mass accepted by the sampler.
pub const SAMPLE_SUM_TOLERANCE: f64 = 1e-8;

/// A categorical distribution over `K` categories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Validates `entries` without modifying them.
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidDistribution("empty vector".into()));
        }
        if let Some(bad) = entries
            .iter()
            .find(|v| !v.is_finite() || **v < -NEGATIVE_TOLERANCE)
        {
            return Err(Error::InvalidDistribution(format!(
                "entry {bad} is negative or non-finite"
            )));
        }
        let sum: f64 = entries.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("entries sum to {sum}")));
        }
        Ok(ProbVector(entries))
    }

    /// Builds a vector from closed-form arithmetic whose exact value is a
    /// distribution: entries in `[-1e-12, 0)` are zeroed and the mass is
    /// renormalized.
    pub fn from_closed_form(mut entries: Vec<f64>) -> Result<Self> {
        for v in entries.iter_mut() {
            if *v < 0.0 && *v >= -NEGATIVE_TOLERANCE {
                *v = 0.0;
            }
        }
        let sum: f64 = entries.iter().sum();
        if sum > 0.0 && (sum - 1.0).abs() <= SAMPLE_SUM_TOLERANCE {
            entries.iter_mut().for_each(|v| *v /= sum);
        }
        Self::new(entries)
    }

    /// Normalizes nonnegative weights into a distribution.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidDistribution(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvalidDistribution("weights sum to zero".into()));
        }
        Self::new(weights.into_iter().map(|w| w / sum).collect())
    }

    pub fn uniform(k: usize) -> Self {
        assert!(k > 0, "uniform distribution needs at least one category");
        ProbVector(vec![1.0 / k as f64; k])
    }

    /// Point mass `e_index`.
    pub fn point_mass(k: usize, index: usize) -> Self {
        OneHot::new(index, k).expect("index < k").to_prob()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// `<self, e_k>`.
    pub fn at(&self, k: usize) -> f64 {
        self.0[k]
    }
}

impl Index<usize> for ProbVector {
    type Output = f64;

    fn index(&self, k: usize) -> &f64 {
        &self.0[k]
    }
}

impl AsRef<[f64]> for ProbVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// One-hot encoding `e_index` of a category out of `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct OneHot {
    index: usize,
    k: usize,
}

impl OneHot {
    pub fn new(index: usize, k: usize) -> Result<Self> {
        if index >= k {
            return Err(Error::Domain(format!(
                "category {index} out of range for K={k}"
            )));
        }
        Ok(OneHot { index, k })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.k];
        v[self.index] = 1.0;
        v
    }

    pub fn to_prob(&self) -> ProbVector {
        ProbVector(self.to_vec())
    }
}

/// `sum_k a[k] * b[k]`.
pub fn inner(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum())
}

/// 1 when both encodings name the same category, else 0.
pub fn kronecker_delta(x: OneHot, y: OneHot) -> u8 {
    debug_assert_eq!(x.k, y.k);
    u8::from(x.index == y.index)
}

/// Upper bounds of the inverse-CDF intervals in ascending category order,
/// after clamping negative entries to zero.
pub fn cumulative_bounds(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    p.iter()
        .map(|&v| {
            acc += v.max(0.0);
            acc
        })
        .collect()
}

/// Draws a category from `p` by inverse CDF over ascending indices.
pub fn sample_categorical(p: &[f64], rng: &mut Rng) -> Result<usize> {
    if p.is_empty() {
        return Err(Error::InvalidDistribution("empty vector".into()));
    }
    let sum: f64 = p.iter().sum();
    if !sum.is_finite() || (sum - 1.0).abs() > SAMPLE_SUM_TOLERANCE {
        return Err(Error::InvalidDistribution(format!(
            "cannot sample: entries sum to {sum}"
        )));
    }
    let u = rng.uniform();
    Ok(invert_cdf(p, u))
}

/// Index of the first category whose cumulative mass exceeds `u`. Falls back
/// to the last category with positive mass when rounding leaves `u` above the
/// total.
pub(crate) fn invert_cdf(p: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (k, &v) in p.iter().enumerate() {
        let v = v.max(0.0);
        if v > 0.0 {
            last_positive = k;
        }
        acc += v;
        if u < acc {
            return k;
        }
    }
    last_positive
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic child seed for stream `stream` of `parent`.
pub fn child_seed(parent: u64, stream: u64) -> u64 {
    splitmix64(parent ^ splitmix64(stream.wrapping_mul(GOLDEN_GAMMA) ^ 0xD1B5_4A32_D192_ED03))
}

/// Seeded random source. Identical seed and call sequence give identical
/// output on every platform.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    draws: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            draws: 0,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of values drawn so far.
    pub fn position(&self) -> u64 {
        self.draws
    }

    /// Independent generator for `stream`; does not advance `self`.
    pub fn split(&self, stream: u64) -> Rng {
        Rng::new(child_seed(self.seed, stream))
    }

    /// Uniform draw on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.draws += 1;
        self.inner.random::<f64>()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform integer on `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        self.draws += 1;
        self.inner.random_range(0..n)
    }

    /// Standard exponential draw.
    pub fn exponential(&mut self) -> f64 {
        -(1.0 - self.uniform()).ln()
    }

    /// Approximately standard normal draw (Box-Muller).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

/// Total variation distance between two distributions of equal length.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "total variation needs equal lengths");
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Normalized histogram of `samples` over `n` bins.
pub fn empirical(samples: impl IntoIterator<Item = usize>, n: usize) -> Vec<f64> {
    let mut counts = vec![0usize; n];
    let mut total = 0usize;
    for s in samples {
        counts[s] += 1;
        total += 1;
    }
    counts
        .into_iter()
        .map(|c| c as f64 / total.max(1) as f64)
        .collect()
}
