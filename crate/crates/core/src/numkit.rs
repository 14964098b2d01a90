//! Numeric kernels shared by every solver: Euclidean-ball projection,
//! simplex/entropy helpers, categorical sampling, and the seeded random
//! stream all randomized code draws from.
//!
//! # Random stream contract
//!
//! A [`RandomStream`] is a ChaCha12 generator keyed by a 64-bit seed. Every
//! variate consumes a fixed number of 64-bit words so that a run can be
//! replayed bit-exactly from `(seed, call sequence)`:
//!
//! | variate                      | words | transform                                   |
//! |------------------------------|-------|---------------------------------------------|
//! | [`RandomStream::uniform`]    | 1     | `(w >> 11) * 2^-53`, in `[0, 1)`            |
//! | [`RandomStream::uniform_open`] | 1   | `((w >> 11) + 0.5) * 2^-53`, in `(0, 1)`    |
//! | [`RandomStream::standard_normal`] | 2 | Box-Muller, cosine branch only            |
//! | [`RandomStream::index_below`] | 1    | `floor(uniform * n)`                        |
//!
//! Child streams are derived with [`RandomStream::child`]: the child seed is
//! `mix(mix(parent_seed) + stream_id)` where `mix` is the SplitMix64
//! finalizer. `mix` is a bijection on `u64`, so for a fixed parent two
//! distinct stream ids always yield distinct child seeds.

use std::ops::Deref;

use rand_chacha::ChaCha12Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

const TWO_POW_MINUS_53: f64 = 1.0 / (1u64 << 53) as f64;

/// SplitMix64 output finalizer (a bijection on `u64`).
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded, replayable source of randomness. Single consumer only; derive
/// children for parallel work.
#[derive(Debug, Clone)]
pub struct RandomStream {
    seed: u64,
    position: u64,
    rng: ChaCha12Rng,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, position: 0, rng: ChaCha12Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of 64-bit words drawn so far.
    pub fn position(&self) -> u64 {
        self.position
    }

    /// Independent stream for `stream_id`. Does not advance `self`.
    pub fn child(&self, stream_id: u64) -> RandomStream {
        RandomStream::new(mix64(mix64(self.seed).wrapping_add(stream_id)))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.position += 1;
        self.rng.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * TWO_POW_MINUS_53
    }

    /// Uniform in the open interval `(0, 1)`.
    pub fn uniform_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * TWO_POW_MINUS_53
    }

    pub fn standard_normal(&mut self) -> f64 {
        let u1 = self.uniform_open();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform index in `0..n`. `n` must be positive.
    pub fn index_below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        let i = (self.uniform() * n as f64) as usize;
        i.min(n - 1)
    }
}

/// A model parameter `w`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.iter().any(|c| !c.is_finite()) {
            return invalid("parameter vector has a non-finite entry");
        }
        Ok(Self(coords))
    }

    pub fn zeros(d: usize) -> Self {
        Self(vec![0.0; d])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Absolute tolerance on `sum(weights) == 1`.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// A point on the probability simplex over `p` groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct GroupWeights(Vec<f64>);

impl GroupWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return invalid("group weights must have at least one entry");
        }
        if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return invalid("group weight outside [0, 1]");
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return invalid(format!("group weights sum to {total}, not 1"));
        }
        Ok(Self(weights))
    }

    /// Rescales a nonnegative vector onto the simplex.
    pub fn normalized(mut weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) || weights.iter().any(|w| *w < 0.0) {
            return invalid("cannot normalize weights: need nonnegative entries with positive finite sum");
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Self::new(weights)
    }

    pub fn uniform(p: usize) -> Self {
        Self(vec![1.0 / p as f64; p])
    }

    pub fn one_hot(p: usize, index: usize) -> Self {
        let mut w = vec![0.0; p];
        w[index] = 1.0;
        Self(w)
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

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for GroupWeights {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for GroupWeights {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<GroupWeights> for Vec<f64> {
    fn from(w: GroupWeights) -> Vec<f64> {
        w.0
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

/// Euclidean projection of `v` onto the closed ball `{u : |u - center| <= radius}`.
pub fn project_l2_ball(v: &[f64], center: &[f64], radius: f64) -> Result<Vec<f64>> {
    if v.len() != center.len() {
        return invalid(format!("dimension mismatch: point {} vs center {}", v.len(), center.len()));
    }
    if !(radius >= 0.0) {
        return invalid("radius must be nonnegative");
    }
    Ok(project_unchecked(v, center, radius))
}

pub(crate) fn project_unchecked(v: &[f64], center: &[f64], radius: f64) -> Vec<f64> {
    let dist = distance(v, center);
    if dist <= radius {
        return v.to_vec();
    }
    let mut scale = radius / dist;
    loop {
        let out: Vec<f64> = v.iter().zip(center).map(|(vi, ci)| ci + scale * (vi - ci)).collect();
        // Rounding can leave the point a hair outside; shrink until it is feasible so
        // that projecting again is a no-op.
        if distance(&out, center) <= radius {
            return out;
        }
        scale *= 1.0 - f64::EPSILON;
    }
}

/// `sum_j lambda_j ln lambda_j` with `0 ln 0 = 0`; lies in `[-ln p, 0]`.
pub fn neg_entropy_term(lambda: &GroupWeights) -> f64 {
    lambda.iter().filter(|&&l| l > 0.0).map(|&l| l * l.ln()).sum()
}

/// `temperature * ln sum_i exp(scores_i / temperature)`, max-shifted.
pub fn log_sum_exp(scores: &[f64], temperature: f64) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = scores.iter().map(|s| ((s - max) / temperature).exp()).sum();
    max + temperature * sum.ln()
}

/// Weights proportional to `exp(scores_i / temperature)`.
pub fn softmax_weights(scores: &[f64], temperature: f64) -> Result<GroupWeights> {
    if !(temperature > 0.0) {
        return invalid("softmax temperature must be positive");
    }
    if scores.is_empty() {
        return invalid("softmax needs at least one score");
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return invalid("softmax scores must be finite");
    }
    let exps: Vec<f64> = scores.iter().map(|s| ((s - max) / temperature).exp()).collect();
    GroupWeights::normalized(exps)
}

/// Inverse-CDF categorical draw for a given uniform `u` in `[0, 1)`.
/// Cumulative sums run left to right; the last positive-weight index absorbs
/// any rounding shortfall.
pub fn categorical_from_uniform(weights: &[f64], u: f64) -> usize {
    let mut cumulative = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last_positive = i;
            cumulative += w;
            if u < cumulative {
                return i;
            }
        }
    }
    last_positive
}

/// One uniform draw, then inverse CDF.
pub fn sample_categorical(lambda: &GroupWeights, rng: &mut RandomStream) -> usize {
    categorical_from_uniform(lambda, rng.uniform())
}

/// Index of the maximum; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Sample mean and standard error of the mean.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_examples() {
        assert_eq!(project_l2_ball(&[0.1, 0.2], &[0.0, 0.0], 1.0).unwrap(), vec![0.1, 0.2]);
        let p = project_l2_ball(&[3.0, 4.0], &[0.0, 0.0], 1.0).unwrap();
        assert!((p[0] - 0.6).abs() < 1e-15 && (p[1] - 0.8).abs() < 1e-15);
        assert_eq!(project_l2_ball(&[0.0, 0.0], &[0.0, 0.0], 0.0).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(
            project_l2_ball(&[1.0], &[0.0, 0.0], 1.0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(neg_entropy_term(&GroupWeights::one_hot(3, 0)), 0.0);
        let u = GroupWeights::uniform(4);
        assert!((neg_entropy_term(&u) + 4f64.ln()).abs() < 1e-12);
        let w = GroupWeights::new(vec![1.0 / 3.0, 2.0 / 3.0]).unwrap();
        let expected = (1.0f64 / 3.0) * (1.0f64 / 3.0).ln() + (2.0f64 / 3.0) * (2.0f64 / 3.0).ln();
        assert!((neg_entropy_term(&w) - expected).abs() < 1e-15);
        assert!((neg_entropy_term(&w) + 0.6365).abs() < 1e-4);
    }

    #[test]
    fn softmax_examples() {
        let w = softmax_weights(&[5.0, 5.0, 5.0], 0.3).unwrap();
        for x in w.iter() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        let w = softmax_weights(&[0.0, 2f64.ln()], 1.0).unwrap();
        assert!((w[0] - 1.0 / 3.0).abs() < 1e-15 && (w[1] - 2.0 / 3.0).abs() < 1e-15);
        let w = softmax_weights(&[0.0, 1000.0], 1.0).unwrap();
        assert!(w[0] < 1e-300 && w[1] == 1.0);
        assert!(softmax_weights(&[1.0], 0.0).is_err());
        assert!(softmax_weights(&[1.0], -1.0).is_err());
    }

    #[test]
    fn softmax_matches_extended_precision() {
        // exp(-1000) underflows f64; compare against log-domain closed form.
        let w = softmax_weights(&[0.0, 1000.0], 1.0).unwrap();
        let log_w0 = -1000.0 - (1.0 + (-1000f64).exp()).ln();
        assert!(log_w0 < -700.0);
        assert_eq!(w[0], log_w0.exp());
    }

    #[test]
    fn categorical_examples() {
        let point = GroupWeights::one_hot(3, 0);
        let mut rng = RandomStream::new(1);
        for _ in 0..100 {
            assert_eq!(sample_categorical(&point, &mut rng), 0);
        }
        assert_eq!(categorical_from_uniform(&[0.5, 0.5], 0.7), 1);
        assert_eq!(categorical_from_uniform(&[0.5, 0.5], 0.2), 0);
        assert_eq!(categorical_from_uniform(&[0.0, 1.0, 0.0], 0.9999999), 1);
    }

    #[test]
    fn categorical_frequencies() {
        let lambda = GroupWeights::new(vec![0.2, 0.3, 0.5]).unwrap();
        let mut rng = RandomStream::new(7);
        let draws = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..draws {
            counts[sample_categorical(&lambda, &mut rng)] += 1;
        }
        for (i, &c) in counts.iter().enumerate() {
            let p = lambda[i];
            let se = (p * (1.0 - p) / draws as f64).sqrt();
            assert!((c as f64 / draws as f64 - p).abs() <= 3.0 * se, "group {i}");
        }
    }

    #[test]
    fn stream_replay_and_children() {
        let mut a = RandomStream::new(42);
        let mut b = RandomStream::new(42);
        for _ in 0..10 {
            assert_eq!(a.standard_normal().to_bits(), b.standard_normal().to_bits());
        }
        assert_eq!(a.position(), 20);
        let parent = RandomStream::new(42);
        let seeds: std::collections::HashSet<u64> = (0..10_000).map(|i| parent.child(i).seed()).collect();
        assert_eq!(seeds.len(), 10_000);
        assert_ne!(parent.child(0).seed(), RandomStream::new(43).child(0).seed());
    }

    #[test]
    fn uniform_open_never_hits_endpoints() {
        let mut rng = RandomStream::new(3);
        for _ in 0..10_000 {
            let u = rng.uniform_open();
            assert!(u > 0.0 && u < 1.0);
        }
    }
}
