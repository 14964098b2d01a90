//! Noise mechanisms and privacy-budget arithmetic.
//!
//! Every sampler consumes a fixed number of stream draws per call, whatever
//! its scale: one uniform per Laplace variate, two per Gaussian coordinate.
//! A run with zero noise therefore walks its random stream exactly like a
//! noisy run with the same seed.
//!
//! `epsilon = +inf` is the no-privacy sentinel; every scale derived from it
//! is exactly zero.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::numkit::{argmax, RandomStream};

/// An `(epsilon, delta)` pair. `epsilon` may be `+inf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return invalid(format!("epsilon must be positive, got {epsilon}"));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return invalid(format!("delta must lie in (0, 1), got {delta}"));
        }
        Ok(Self { epsilon, delta })
    }

    /// No privacy: `epsilon = inf`.
    pub fn non_private(delta: f64) -> Self {
        Self { epsilon: f64::INFINITY, delta }
    }

    pub fn is_private(&self) -> bool {
        self.epsilon.is_finite()
    }
}

/// Per-step noise scales.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseScales {
    /// Per-coordinate standard deviation.
    pub gaussian_sigma: f64,
    /// Laplace scale `b`.
    pub laplace_tau: f64,
}

/// Laplace variate from a uniform `u` in `(0, 1)` by inverse CDF.
pub fn laplace_from_uniform(scale: f64, u: f64) -> f64 {
    if scale == 0.0 {
        return 0.0;
    }
    let c = u - 0.5;
    -scale * c.signum() * (1.0 - 2.0 * c.abs()).ln()
}

pub fn laplace_noise(scale: f64, rng: &mut RandomStream) -> Result<f64> {
    if !(scale >= 0.0) {
        return invalid(format!("Laplace scale must be nonnegative, got {scale}"));
    }
    let u = rng.uniform_open();
    Ok(laplace_from_uniform(scale, u))
}

pub fn gaussian_noise(sigma: f64, dim: usize, rng: &mut RandomStream) -> Result<Vec<f64>> {
    if !(sigma >= 0.0) {
        return invalid(format!("Gaussian sigma must be nonnegative, got {sigma}"));
    }
    Ok((0..dim)
        .map(|_| {
            let z = rng.standard_normal();
            if sigma == 0.0 {
                0.0
            } else {
                sigma * z
            }
        })
        .collect())
}

/// `6 D sqrt(2 log2(n) ln(1/delta) eta eta_t) / epsilon`.
pub fn phased_noise_sigma(d_scale: f64, n: usize, eta: f64, eta_t: f64, budget: PrivacyBudget) -> Result<f64> {
    if n < 2 {
        return invalid("phased noise needs n >= 2");
    }
    if !(d_scale > 0.0 && eta > 0.0 && eta_t > 0.0) {
        return invalid("D, eta and eta_t must be positive");
    }
    if !budget.is_private() {
        return Ok(0.0);
    }
    let log2n = (n as f64).log2();
    Ok(6.0 * d_scale * (2.0 * log2n * (1.0 / budget.delta).ln() * eta * eta_t).sqrt() / budget.epsilon)
}

/// Index of the largest `scores[i] + Lap(tau)`; ties go to the lowest index.
/// Always draws `p` uniforms.
pub fn report_noisy_max(scores: &[f64], tau: f64, rng: &mut RandomStream) -> Result<usize> {
    if scores.is_empty() {
        return invalid("report-noisy-max needs at least one score");
    }
    let noisy = scores
        .iter()
        .map(|s| laplace_noise(tau, rng).map(|y| s + y))
        .collect::<Result<Vec<_>>>()?;
    Ok(argmax(&noisy))
}

/// Per-step budget whose `T`-fold advanced composition stays within `total`
/// for `epsilon <= 1`:
/// `eps0 = eps / (2 sqrt(2 T ln(2/delta)))`, `delta0 = delta / (2T)`.
pub fn calibrate_composed_budget(total: PrivacyBudget, steps: usize) -> Result<PrivacyBudget> {
    if steps < 1 {
        return invalid("composition needs at least one step");
    }
    let t = steps as f64;
    let epsilon = total.epsilon / (2.0 * (2.0 * t * (2.0 / total.delta).ln()).sqrt());
    Ok(PrivacyBudget { epsilon, delta: total.delta / (2.0 * t) })
}

/// Node noise scale for tree-aggregated prefix sums of `L`-bounded vectors:
/// `(2L/eps) sqrt(2 h ln(1.25/delta))` with `h = max(1, ceil(log2 T))`.
pub fn tree_sigma_node(lipschitz: f64, horizon: usize, budget: PrivacyBudget) -> f64 {
    if !budget.is_private() {
        return 0.0;
    }
    let height = (horizon.max(2) as f64).log2().ceil();
    2.0 * lipschitz / budget.epsilon * (2.0 * height * (1.25 / budget.delta).ln()).sqrt()
}

/// A node of the dyadic tree: the block `[index * 2^level + 1, (index + 1) * 2^level]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TreeNode {
    pub level: u32,
    pub index: u64,
}

impl TreeNode {
    fn stream_id(self) -> u64 {
        (u64::from(self.level) << 56) | self.index
    }
}

/// Minimal dyadic cover of `[1, t]`, largest block first. Its length is the
/// number of set bits of `t`.
pub fn dyadic_decomposition(t: u64) -> Vec<TreeNode> {
    let mut nodes = Vec::with_capacity(t.count_ones() as usize);
    let mut start = 0u64;
    for level in (0..64).rev() {
        if t & (1u64 << level) != 0 {
            nodes.push(TreeNode { level, index: start >> level });
            start += 1u64 << level;
        }
    }
    nodes
}

/// Lazily sampled node noises for private prefix sums over a horizon `T`.
///
/// Node `v` draws its vector from `stream.child(id(v))` on first touch, so
/// the value of a node does not depend on query order.
#[derive(Debug, Clone)]
pub struct TreeNoise {
    horizon: usize,
    sigma_node: f64,
    dim: usize,
    stream: RandomStream,
    cache: HashMap<TreeNode, Vec<f64>>,
}

impl TreeNoise {
    pub fn new(horizon: usize, sigma_node: f64, dim: usize, stream: RandomStream) -> Result<Self> {
        if horizon < 1 {
            return invalid("tree horizon must be >= 1");
        }
        if !(sigma_node >= 0.0) {
            return invalid("node sigma must be nonnegative");
        }
        Ok(Self { horizon, sigma_node, dim, stream, cache: HashMap::new() })
    }

    pub fn sigma_node(&self) -> f64 {
        self.sigma_node
    }

    pub fn nodes_sampled(&self) -> usize {
        self.cache.len()
    }

    /// Sum of node noises covering `[1, t]`; zero at `t = 0`.
    pub fn prefix(&mut self, t: usize) -> Result<Vec<f64>> {
        if t > self.horizon {
            return invalid(format!("prefix {t} beyond horizon {}", self.horizon));
        }
        let mut out = vec![0.0; self.dim];
        for node in dyadic_decomposition(t as u64) {
            let (sigma, dim, stream) = (self.sigma_node, self.dim, &self.stream);
            let noise = self.cache.entry(node).or_insert_with(|| {
                let mut rng = stream.child(node.stream_id());
                gaussian_noise(sigma, dim, &mut rng).expect("sigma checked at construction")
            });
            for (o, v) in out.iter_mut().zip(noise.iter()) {
                *o += v;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_var(xs: &[f64]) -> f64 {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
    }

    #[test]
    fn laplace_examples() {
        let mut rng = RandomStream::new(1);
        assert_eq!(laplace_noise(0.0, &mut rng).unwrap(), 0.0);
        assert_eq!(laplace_from_uniform(1.0, 0.5), 0.0);
        assert!(laplace_noise(-1.0, &mut rng).is_err());
        let xs: Vec<f64> = (0..1_000_000).map(|_| laplace_noise(1.0, &mut rng).unwrap()).collect();
        assert!((sample_var(&xs) / 2.0 - 1.0).abs() < 0.05);
    }

    #[test]
    fn gaussian_examples() {
        let mut rng = RandomStream::new(2);
        assert_eq!(gaussian_noise(0.0, 3, &mut rng).unwrap(), vec![0.0; 3]);
        assert!(gaussian_noise(-0.1, 3, &mut rng).is_err());
        let xs: Vec<f64> = (0..1_000_000).map(|_| gaussian_noise(2.0, 1, &mut rng).unwrap()[0]).collect();
        assert!((sample_var(&xs) / 4.0 - 1.0).abs() < 0.05);
        let n = 100_000;
        let pairs: Vec<Vec<f64>> = (0..n).map(|_| gaussian_noise(1.0, 2, &mut rng).unwrap()).collect();
        let prods: Vec<f64> = pairs.iter().map(|v| v[0] * v[1]).collect();
        let (mean, se) = crate::numkit::mean_and_stderr(&prods);
        assert!(mean.abs() <= 4.0 * se);
    }

    #[test]
    fn zero_scale_consumes_same_draws() {
        let mut a = RandomStream::new(7);
        let mut b = RandomStream::new(7);
        gaussian_noise(0.0, 5, &mut a).unwrap();
        gaussian_noise(3.0, 5, &mut b).unwrap();
        laplace_noise(0.0, &mut a).unwrap();
        laplace_noise(2.0, &mut b).unwrap();
        assert_eq!(a.position(), b.position());
        assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn phased_sigma_examples() {
        let b = PrivacyBudget::new(1.0, 1e-5).unwrap();
        let s = phased_noise_sigma(1.0, 16, 0.1, 0.05, b).unwrap();
        let oracle = 6.0 * (2.0 * 4.0 * (1e5f64).ln() * 0.005).sqrt();
        assert!((s - oracle).abs() < 1e-12);
        assert!((s - 4.0716).abs() < 1e-3);
        let b2 = PrivacyBudget::new(2.0, 1e-5).unwrap();
        assert_eq!(phased_noise_sigma(1.0, 16, 0.1, 0.05, b2).unwrap(), s / 2.0);
        assert_eq!(phased_noise_sigma(1.0, 16, 0.1, 0.05, PrivacyBudget::non_private(1e-5)).unwrap(), 0.0);
        assert!(phased_noise_sigma(1.0, 1, 0.1, 0.05, b).is_err());
    }

    #[test]
    fn noisy_max_examples() {
        let mut rng = RandomStream::new(3);
        assert_eq!(report_noisy_max(&[10.0, 0.0, 0.0], 0.0, &mut rng).unwrap(), 0);
        assert_eq!(report_noisy_max(&[1.0, 1.0, 0.5], 0.0, &mut rng).unwrap(), 0);
        let p = 4;
        let trials = 100_000;
        let mut counts = vec![0usize; p];
        for _ in 0..trials {
            counts[report_noisy_max(&vec![0.3; p], 1.0, &mut rng).unwrap()] += 1;
        }
        let q = 1.0 / p as f64;
        let se = (q * (1.0 - q) / trials as f64).sqrt();
        for c in counts {
            assert!((c as f64 / trials as f64 - q).abs() <= 3.0 * se);
        }
        let wins = (0..10_000).filter(|_| report_noisy_max(&[10.0, 0.0], 1.0, &mut rng).unwrap() == 0).count();
        assert!(wins >= 9_500);
    }

    #[test]
    fn composition_examples() {
        let b = PrivacyBudget::new(1.0, 1e-5).unwrap();
        let one = calibrate_composed_budget(b, 1).unwrap();
        assert!((one.epsilon - 1.0 / (2.0 * (2.0 * (2e5f64).ln()).sqrt())).abs() < 1e-15);
        assert!((one.epsilon - 0.1013).abs() < 2e-4);
        assert_eq!(calibrate_composed_budget(b, 10).unwrap().delta, 1e-5 / 20.0);
        assert_eq!(calibrate_composed_budget(b, 40).unwrap().epsilon, calibrate_composed_budget(b, 10).unwrap().epsilon / 2.0);
        assert!(calibrate_composed_budget(b, 0).is_err());
    }

    #[test]
    fn dyadic_examples() {
        let seven = dyadic_decomposition(7);
        assert_eq!(
            seven,
            vec![TreeNode { level: 2, index: 0 }, TreeNode { level: 1, index: 2 }, TreeNode { level: 0, index: 6 }]
        );
        assert_eq!(dyadic_decomposition(4), vec![TreeNode { level: 2, index: 0 }]);
        for t in 1..200u64 {
            let nodes = dyadic_decomposition(t);
            assert_eq!(nodes.len(), t.count_ones() as usize);
            let covered: u64 = nodes.iter().map(|n| 1u64 << n.level).sum();
            assert_eq!(covered, t);
        }
    }

    #[test]
    fn tree_noise_cache_and_zero() {
        let mut zero = TreeNoise::new(8, 0.0, 2, RandomStream::new(1)).unwrap();
        for t in 0..=8 {
            assert_eq!(zero.prefix(t).unwrap(), vec![0.0, 0.0]);
        }
        assert!(zero.prefix(9).is_err());
        let mut tree = TreeNoise::new(8, 1.0, 3, RandomStream::new(5)).unwrap();
        let a = tree.prefix(7).unwrap();
        assert_eq!(tree.nodes_sampled(), 3);
        let b = tree.prefix(7).unwrap();
        assert_eq!(a, b);
        let mut other_order = TreeNoise::new(8, 1.0, 3, RandomStream::new(5)).unwrap();
        other_order.prefix(6).unwrap();
        assert_eq!(other_order.prefix(7).unwrap(), a);
    }
}
