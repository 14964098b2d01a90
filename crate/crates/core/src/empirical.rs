//! Offline solvers on fixed datasets `S_1..S_p` of size `n`:
//! noisy SGD with multiplicative group reweighting (MGR) and noisy SGD with
//! report-noisy-max group selection (AGS).
//!
//! Noise calibrations use the constant [`PRIVACY_CONSTANT`]:
//! `τ = c B p sqrt(T ln(1/δ)) / (K ε)` and
//! `σ² = c T p² L² ln(T/δ) ln(1/δ) / (K² ε²)` for MGR
//! (`ln(K/δ)` in place of `ln(T/δ)` for AGS). With `c = 8` the Laplace scale
//! is at least `2 B p / (K ε₀)` where `ε₀` is the per-step budget from
//! [`crate::mechanisms::calibrate_composed_budget`], for every `δ <= 1/2`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::mechanisms::{gaussian_noise, laplace_noise, report_noisy_max, PrivacyBudget};
use crate::numkit::{axpy, sample_categorical, GroupWeights, ParamVector, RandomStream};
use crate::online::hedge_update_counted;
use crate::problem::{DataPoint, DatasetCollection, GroupRisks, LossSpec, ParamSpace};

/// The constant `c` in the noise calibrations.
pub const PRIVACY_CONSTANT: f64 = 8.0;
/// Upper cap on the number of rounds chosen by the default settings.
pub const MAX_ROUNDS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MgrConfig {
    pub batch_size: usize,
    pub rounds: usize,
    pub eta_w: f64,
    pub eta_lambda: f64,
    /// Per-coordinate standard deviation of the gradient noise.
    pub sigma: f64,
    pub tau: f64,
    /// True when the default `T` hit [`MAX_ROUNDS`] or 1.
    #[serde(default)]
    pub capped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgsConfig {
    pub batch_size: usize,
    pub rounds: usize,
    pub eta: f64,
    pub sigma: f64,
    pub tau: f64,
    pub kappa: f64,
    #[serde(default)]
    pub capped: bool,
}

fn cap_rounds(raw: f64) -> (usize, bool) {
    if !(raw >= 1.0) {
        (1, true)
    } else if raw > MAX_ROUNDS as f64 {
        (MAX_ROUNDS, true)
    } else {
        (raw.floor() as usize, false)
    }
}

/// `c B p sqrt(T ln(1/δ)) / (K ε)`.
pub fn laplace_tau(range_bound: f64, p: usize, budget_k: usize, rounds: usize, privacy: PrivacyBudget) -> f64 {
    if !privacy.is_private() {
        return 0.0;
    }
    PRIVACY_CONSTANT * range_bound * p as f64 * (rounds as f64 * (1.0 / privacy.delta).ln()).sqrt()
        / (budget_k as f64 * privacy.epsilon)
}

/// `c T p² L² ln(log_arg/δ) ln(1/δ) / (K² ε²)`.
fn gaussian_variance(lipschitz: f64, p: usize, budget_k: usize, rounds: usize, log_arg: f64, privacy: PrivacyBudget) -> f64 {
    if !privacy.is_private() {
        return 0.0;
    }
    let k = budget_k as f64;
    PRIVACY_CONSTANT * rounds as f64 * (p * p) as f64 * lipschitz * lipschitz
        * (log_arg / privacy.delta).ln()
        * (1.0 / privacy.delta).ln()
        / (k * k * privacy.epsilon * privacy.epsilon)
}

/// MGR gradient-noise variance `c T p² L² ln(T/δ) ln(1/δ) / (K² ε²)`.
pub fn mgr_sigma_sq(lipschitz: f64, p: usize, budget_k: usize, rounds: usize, privacy: PrivacyBudget) -> f64 {
    gaussian_variance(lipschitz, p, budget_k, rounds, rounds as f64, privacy)
}

/// AGS gradient-noise variance `c T p² L² ln(K/δ) ln(1/δ) / (K² ε²)`.
pub fn ags_sigma_sq(lipschitz: f64, p: usize, budget_k: usize, rounds: usize, privacy: PrivacyBudget) -> f64 {
    gaussian_variance(lipschitz, p, budget_k, rounds, budget_k as f64, privacy)
}

/// Sizes and bounds that the default settings depend on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemScales {
    pub budget_k: usize,
    pub p: usize,
    pub d: usize,
    pub diameter: f64,
    pub lipschitz: f64,
    pub range_bound: f64,
}

impl ProblemScales {
    pub fn new(budget_k: usize, loss: &LossSpec, space: &ParamSpace, p: usize) -> Self {
        Self {
            budget_k,
            p,
            d: space.dim(),
            diameter: space.diameter,
            lipschitz: loss.lipschitz,
            range_bound: loss.range_bound,
        }
    }

    fn check(&self) -> Result<()> {
        let positive = self.diameter > 0.0 && self.lipschitz > 0.0 && self.range_bound > 0.0;
        if self.budget_k == 0 || self.p == 0 || self.d == 0 || !positive {
            return invalid("K, p, d, M, L and B must all be positive");
        }
        Ok(())
    }
}

/// Default MGR round count with the order constants set to 1 and `G = L`:
/// `T = (M L + B sqrt(ln p)) K² ε² / (L B d p² ln(1/δ))`, capped to
/// `[1, 10^6]`. The flag reports whether the cap was hit.
pub fn mgr_default_rounds(s: &ProblemScales, privacy: PrivacyBudget) -> Result<(usize, bool)> {
    s.check()?;
    let (k, pf) = (s.budget_k as f64, s.p as f64);
    let raw = (s.diameter * s.lipschitz + s.range_bound * pf.ln().sqrt()) * k * k * privacy.epsilon * privacy.epsilon
        / (s.lipschitz * s.range_bound * s.d as f64 * pf * pf * (1.0 / privacy.delta).ln());
    Ok(cap_rounds(raw))
}

/// MGR settings for a given `T`: `η_w = M / sqrt(T (L² + d σ²))`,
/// `U = B + τ ln(K T)`, `η_λ = sqrt(ln p / (U² T))`, batch size 1.
pub fn mgr_params(s: &ProblemScales, rounds: usize, privacy: PrivacyBudget) -> Result<MgrConfig> {
    s.check()?;
    if rounds == 0 {
        return invalid("need at least one round");
    }
    let sigma_sq = mgr_sigma_sq(s.lipschitz, s.p, s.budget_k, rounds, privacy);
    let tau = laplace_tau(s.range_bound, s.p, s.budget_k, rounds, privacy);
    let t = rounds as f64;
    let eta_w = s.diameter / (t * (s.lipschitz * s.lipschitz + s.d as f64 * sigma_sq)).sqrt();
    let u = s.range_bound + tau * (s.budget_k as f64 * t).ln();
    let eta_lambda = ((s.p as f64).ln() / (u * u * t)).sqrt();
    Ok(MgrConfig { batch_size: 1, rounds, eta_w, eta_lambda, sigma: sigma_sq.sqrt(), tau, capped: false })
}

/// [`mgr_params`] at [`mgr_default_rounds`].
pub fn mgr_default_params(s: &ProblemScales, privacy: PrivacyBudget) -> Result<MgrConfig> {
    let (rounds, capped) = mgr_default_rounds(s, privacy)?;
    Ok(MgrConfig { capped, ..mgr_params(s, rounds, privacy)? })
}

/// Default AGS round count with `G = L` and `q = p`:
/// `T = M L K ε / (16 B p sqrt(ln(1/δ)))`, capped to `[1, 10^6]`.
pub fn ags_default_rounds(s: &ProblemScales, privacy: PrivacyBudget) -> Result<(usize, bool)> {
    s.check()?;
    let raw = s.diameter * s.lipschitz * s.budget_k as f64 * privacy.epsilon
        / (16.0 * s.range_bound * s.p as f64 * (1.0 / privacy.delta).ln().sqrt());
    Ok(cap_rounds(raw))
}

/// AGS settings for a given `T`: `η = M / sqrt(T (L² + d σ²))`, batch
/// size 1, `κ = 0.05`.
pub fn ags_params(s: &ProblemScales, rounds: usize, privacy: PrivacyBudget) -> Result<AgsConfig> {
    s.check()?;
    if rounds == 0 {
        return invalid("need at least one round");
    }
    let sigma_sq = ags_sigma_sq(s.lipschitz, s.p, s.budget_k, rounds, privacy);
    let tau = laplace_tau(s.range_bound, s.p, s.budget_k, rounds, privacy);
    let eta = s.diameter / (rounds as f64 * (s.lipschitz * s.lipschitz + s.d as f64 * sigma_sq)).sqrt();
    Ok(AgsConfig { batch_size: 1, rounds, eta, sigma: sigma_sq.sqrt(), tau, kappa: 0.05, capped: false })
}

/// [`ags_params`] at [`ags_default_rounds`].
pub fn ags_default_params(s: &ProblemScales, privacy: PrivacyBudget) -> Result<AgsConfig> {
    let (rounds, capped) = ags_default_rounds(s, privacy)?;
    Ok(AgsConfig { capped, ..ags_params(s, rounds, privacy)? })
}

/// Mean gradient over `dataset[indices]` at `w`.
pub fn minibatch_gradient(dataset: &[DataPoint], indices: &[usize], w: &[f64], loss: &LossSpec) -> Vec<f64> {
    let mut g = vec![0.0; w.len()];
    let scale = 1.0 / indices.len() as f64;
    for &i in indices {
        loss.add_gradient(w, &dataset[i], scale, &mut g);
    }
    g
}

/// `Proj_W(w - η (batch gradient + N(0, σ² I)))` with a fresh batch of
/// `m` indices drawn uniformly with replacement.
#[allow(clippy::too_many_arguments)]
fn noisy_sgd_step(
    w: &[f64],
    dataset: &[DataPoint],
    batch_size: usize,
    eta: f64,
    sigma: f64,
    loss: &LossSpec,
    space: &ParamSpace,
    batch_rng: &mut RandomStream,
    noise_rng: &mut RandomStream,
) -> Result<Vec<f64>> {
    let indices: Vec<usize> = (0..batch_size).map(|_| batch_rng.index_below(dataset.len())).collect();
    let mut g = minibatch_gradient(dataset, &indices, w, loss);
    let noise = gaussian_noise(sigma, w.len(), noise_rng)?;
    axpy(1.0, &noise, &mut g);
    let target: Vec<f64> = w.iter().zip(&g).map(|(wi, gi)| wi - eta * gi).collect();
    Ok(space.project(&target))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MgrRun {
    pub w_bar: ParamVector,
    pub lambda_bar: GroupWeights,
    pub underflow_events: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgsRun {
    pub w_bar: ParamVector,
    /// How often each group was selected.
    pub selections: Vec<usize>,
}

fn check_run(collection: &DatasetCollection, batch_size: usize, rounds: usize, space: &ParamSpace) -> Result<()> {
    if rounds < 1 {
        return invalid("need at least one round");
    }
    if batch_size == 0 || batch_size > collection.size() {
        return invalid(format!("batch size {batch_size} must lie in 1..={}", collection.size()));
    }
    if collection.dataset(0)[0].x.len() != space.dim() {
        return invalid("data dimension does not match the parameter space");
    }
    Ok(())
}

/// Noisy SGD with multiplicative group reweighting, started at the center
/// of `W` with uniform weights. Streams: group choice `rng.child(0)`, batch
/// indices `child(1)`, gradient noise `child(2)`, loss noise `child(3)`.
pub fn run_mgr(
    collection: &DatasetCollection,
    config: &MgrConfig,
    loss: &LossSpec,
    space: &ParamSpace,
    rng: &RandomStream,
) -> Result<MgrRun> {
    check_run(collection, config.batch_size, config.rounds, space)?;
    let risks = GroupRisks::from_collection(collection, loss)?;
    let (mut pick_rng, mut batch_rng, mut noise_rng, mut lap_rng) = (rng.child(0), rng.child(1), rng.child(2), rng.child(3));
    let p = collection.groups();
    let mut w = space.center.clone();
    let mut lambda = GroupWeights::uniform(p);
    let mut sum_w = w.clone();
    let mut sum_l = lambda.to_vec();
    let mut underflow_events = 0;
    for _ in 1..config.rounds {
        let arm = sample_categorical(&lambda, &mut pick_rng);
        let next = noisy_sgd_step(
            &w,
            collection.dataset(arm),
            config.batch_size,
            config.eta_w,
            config.sigma,
            loss,
            space,
            &mut batch_rng,
            &mut noise_rng,
        )?;
        let losses = risks
            .risks(&w)
            .iter()
            .map(|r| laplace_noise(config.tau, &mut lap_rng).map(|y| -r + y))
            .collect::<Result<Vec<_>>>()?;
        let (updated, floored) = hedge_update_counted(&lambda, &losses, config.eta_lambda)?;
        underflow_events += floored;
        lambda = updated;
        w = next;
        axpy(1.0, &w, &mut sum_w);
        axpy(1.0, &lambda, &mut sum_l);
    }
    let t = config.rounds as f64;
    let w_bar = space.project(&sum_w.iter().map(|v| v / t).collect::<Vec<_>>());
    let lambda_bar = GroupWeights::normalized(sum_l.iter().map(|v| v / t).collect())?;
    Ok(MgrRun { w_bar: ParamVector(w_bar), lambda_bar, underflow_events })
}

/// Noisy SGD on the group chosen each round by report-noisy-max over the
/// empirical risks. Streams as in [`run_mgr`], with selection noise on
/// `child(3)`.
pub fn run_ags(
    collection: &DatasetCollection,
    config: &AgsConfig,
    loss: &LossSpec,
    space: &ParamSpace,
    rng: &RandomStream,
) -> Result<AgsRun> {
    check_run(collection, config.batch_size, config.rounds, space)?;
    if !(config.kappa > 0.0 && config.kappa < 1.0) {
        return invalid("kappa must lie in (0, 1)");
    }
    let risks = GroupRisks::from_collection(collection, loss)?;
    let (mut batch_rng, mut noise_rng, mut lap_rng) = (rng.child(1), rng.child(2), rng.child(3));
    let mut w = space.center.clone();
    let mut sum_w = w.clone();
    let mut selections = vec![0; collection.groups()];
    for _ in 1..config.rounds {
        let arm = report_noisy_max(&risks.risks(&w), config.tau, &mut lap_rng)?;
        selections[arm] += 1;
        w = noisy_sgd_step(
            &w,
            collection.dataset(arm),
            config.batch_size,
            config.eta,
            config.sigma,
            loss,
            space,
            &mut batch_rng,
            &mut noise_rng,
        )?;
        axpy(1.0, &w, &mut sum_w);
    }
    let t = config.rounds as f64;
    let w_bar = space.project(&sum_w.iter().map(|v| v / t).collect::<Vec<_>>());
    Ok(AgsRun { w_bar: ParamVector(w_bar), selections })
}
