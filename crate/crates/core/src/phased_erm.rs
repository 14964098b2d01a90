//! Phased regularized ERM with Gaussian output perturbation.
//!
//! With `n = floor(K/p)` samples per group and `T = floor(log2 n)` phases of
//! `n_t = floor(n/T)` fresh samples each, phase `t` solves the regularized
//! minimax problem anchored at the previous output with
//! `μ_w^t = 1/(η_t n_t)`, `μ_λ = 1/(η n)`, `η_t = η 2^{-t}`, to a gap of
//! `α_t = L²/(8 n_t² μ_w^t) + B²/(8 n_t² μ_λ)`, then adds `N(0, σ_t² I)`.
//! The noised point is not projected back onto `W`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mechanisms::{gaussian_noise, phased_noise_sigma, PrivacyBudget};
use crate::numkit::{distance, ParamVector, RandomStream};
use crate::problem::{make_neighbor, AffineGenerator, LossSpec, ParamSpace, SampleOracleSet};
use crate::saddle::{solve_to_alpha, RegularizedObjective, SaddleSolver, SolveMethod};

/// Parameters of one phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseParams {
    /// 1-based phase index.
    pub t: usize,
    pub n_t: usize,
    pub eta_t: f64,
    pub mu_w: f64,
    pub mu_lambda: f64,
    pub alpha: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasedSchedule {
    pub n: usize,
    pub p: usize,
    pub eta: f64,
    pub phases: Vec<PhaseParams>,
}

impl PhasedSchedule {
    pub fn phase_count(&self) -> usize {
        self.phases.len()
    }

    /// `p Σ_t n_t`.
    pub fn total_draws(&self) -> usize {
        self.p * self.phases.iter().map(|ph| ph.n_t).sum::<usize>()
    }
}

/// Builds the phase schedule. Requires `K >= 4p`.
pub fn make_schedule(
    budget_k: usize,
    p: usize,
    eta: f64,
    loss: &LossSpec,
    privacy: PrivacyBudget,
) -> Result<PhasedSchedule> {
    if p == 0 {
        return invalid("p must be >= 1");
    }
    if budget_k < 4 * p {
        return Err(Error::InstanceTooSmall(format!("phased ERM needs K >= 4p, got K={budget_k}, p={p}")));
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return invalid("eta must be positive and finite");
    }
    let n = budget_k / p;
    let phase_count = n.ilog2() as usize;
    let n_t = n / phase_count;
    let (l, b) = (loss.lipschitz, loss.range_bound);
    let mu_lambda = 1.0 / (eta * n as f64);
    let phases = (1..=phase_count)
        .map(|t| {
            let eta_t = eta * 0.5f64.powi(t as i32);
            let mu_w = 1.0 / (eta_t * n_t as f64);
            let nt2 = (n_t * n_t) as f64;
            let alpha = l * l / (8.0 * nt2 * mu_w) + b * b / (8.0 * nt2 * mu_lambda);
            let sigma = phased_noise_sigma(loss.scale(), n, eta, eta_t, privacy)?;
            Ok(PhaseParams { t, n_t, eta_t, mu_w, mu_lambda, alpha, sigma })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PhasedSchedule { n, p, eta, phases })
}

/// `η = (M/D) min{ ε / sqrt(72 d ln(K/p) ln(1/δ)), sqrt(p) / (ln^{3/4}(K) sqrt(K)) }`.
///
/// `K` is real-valued here so the formula can be evaluated off the integer
/// grid; with `ε = inf` only the second branch remains.
pub fn default_eta(diameter: f64, scale: f64, budget_k: f64, p: f64, privacy: PrivacyBudget, d: usize) -> f64 {
    let privacy_branch =
        privacy.epsilon / (72.0 * d as f64 * (budget_k / p).ln() * (1.0 / privacy.delta).ln()).sqrt();
    let statistical_branch = p.sqrt() / (budget_k.ln().powf(0.75) * budget_k.sqrt());
    diameter / scale * privacy_branch.min(statistical_branch)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhasedOptions {
    /// Project each noised phase output onto `W` before using it as the
    /// next anchor.
    pub project_anchors: bool,
    pub solver: SaddleSolver,
}

/// What happened in one phase.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseTrace {
    pub w_tilde: Vec<f64>,
    pub w_out: Vec<f64>,
    pub gap: f64,
    pub method: SolveMethod,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhasedRun {
    /// `w_T`, possibly outside `W`.
    pub output: ParamVector,
    pub phases: Vec<PhaseTrace>,
    pub draws_used: usize,
}

/// Runs all phases. Data draws come from `rng.child(0)`, phase noise from
/// `rng.child(1)`; the initial anchor is the center of `W`.
pub fn run_phased_erm(
    oracles: &mut SampleOracleSet,
    schedule: &PhasedSchedule,
    loss: &LossSpec,
    space: &ParamSpace,
    options: &PhasedOptions,
    rng: &RandomStream,
) -> Result<PhasedRun> {
    if oracles.groups() != schedule.p {
        return invalid("schedule was built for a different number of groups");
    }
    if oracles.remaining() < schedule.total_draws() {
        return Err(Error::BudgetExhausted {
            requested: schedule.total_draws(),
            used: oracles.draws_used(),
            budget: oracles.budget(),
        });
    }
    let mut data_rng = rng.child(0);
    let mut noise_rng = rng.child(1);
    let start = oracles.draws_used();
    let mut anchor = space.center.clone();
    let mut phases = Vec::with_capacity(schedule.phase_count());
    for ph in &schedule.phases {
        let collection = oracles.draw_collection(ph.n_t, &mut data_rng)?;
        let obj = RegularizedObjective::new(&collection, loss, space, ph.mu_w, ph.mu_lambda, anchor.clone())?;
        let cert = solve_to_alpha(&obj, ph.alpha, &space.project(&anchor), options.solver)?;
        let noise = gaussian_noise(ph.sigma, space.dim(), &mut noise_rng)?;
        let mut w: Vec<f64> = cert.w_bar.iter().zip(&noise).map(|(a, b)| a + b).collect();
        if options.project_anchors {
            w = space.project(&w);
        }
        phases.push(PhaseTrace { w_tilde: cert.w_bar.into_inner(), w_out: w.clone(), gap: cert.gap_upper, method: cert.method });
        anchor = w;
    }
    Ok(PhasedRun { output: ParamVector(anchor), phases, draws_used: oracles.draws_used() - start })
}

/// `6 D sqrt(log2(n) η_t η)`: the sensitivity of a phase solution to one
/// replaced sample.
pub fn phase_sensitivity_bound(schedule: &PhasedSchedule, phase: usize, scale: f64) -> f64 {
    let eta_t = schedule.phases[phase - 1].eta_t;
    6.0 * scale * ((schedule.n as f64).log2() * eta_t * schedule.eta).sqrt()
}

/// Random affine instances for [`phase_sensitivity_probe`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivitySetup {
    pub d: usize,
    pub p: usize,
    pub budget_k: usize,
    pub lipschitz: f64,
    pub diameter: f64,
    pub epsilon: f64,
    pub delta: f64,
    /// 1-based phase to probe.
    pub phase: usize,
}

impl Default for SensitivitySetup {
    fn default() -> Self {
        Self { d: 2, p: 3, budget_k: 3072, lipschitz: 1.0, diameter: 1.0, epsilon: 1.0, delta: 1e-5, phase: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityReport {
    pub distances: Vec<f64>,
    pub max_distance: f64,
    pub bound: f64,
    pub violations: usize,
}

/// For each pair: a random affine collection of `n_t` points per group and a
/// neighbor differing in one point, both solved to `α_t` with the anchor at
/// the center of `W`; records `|w̃_t - w̃_t'|`. Pair `k` draws from
/// `rng.child(k)`.
pub fn phase_sensitivity_probe(setup: &SensitivitySetup, pairs: usize, rng: &RandomStream) -> Result<SensitivityReport> {
    if pairs < 1 {
        return invalid("need at least one pair");
    }
    let privacy = PrivacyBudget::new(setup.epsilon, setup.delta)?;
    let space = ParamSpace::centered(setup.d, setup.diameter)?;
    let loss = crate::problem::make_loss(crate::problem::LossKind::Affine, setup.d, &space, setup.lipschitz)?;
    let eta = default_eta(space.diameter, loss.scale(), setup.budget_k as f64, setup.p as f64, privacy, setup.d);
    let schedule = make_schedule(setup.budget_k, setup.p, eta, &loss, privacy)?;
    if setup.phase < 1 || setup.phase > schedule.phase_count() {
        return invalid(format!("phase {} outside 1..={}", setup.phase, schedule.phase_count()));
    }
    let ph = &schedule.phases[setup.phase - 1];
    let bound = phase_sensitivity_bound(&schedule, setup.phase, loss.scale());
    let distances = (0..pairs as u64)
        .into_par_iter()
        .map(|k| {
            let mut r = rng.child(k);
            let gen = AffineGenerator::new(setup.d, setup.p, setup.lipschitz, setup.diameter, &mut r)?;
            let coll = gen.collection(ph.n_t, &mut r)?;
            let group = r.index_below(setup.p);
            let index = r.index_below(ph.n_t);
            let neighbor = make_neighbor(&coll, group, index, gen.sample_any(&mut r))?;
            let solve = |c| -> Result<Vec<f64>> {
                let obj = RegularizedObjective::new(c, &gen.loss, &gen.space, ph.mu_w, ph.mu_lambda, space.center.clone())?;
                Ok(solve_to_alpha(&obj, ph.alpha, &space.center, SaddleSolver::default())?.w_bar.into_inner())
            };
            Ok(distance(&solve(&coll)?, &solve(&neighbor)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let max_distance = distances.iter().copied().fold(0.0, f64::max);
    let violations = distances.iter().filter(|&&x| x > bound).count();
    Ok(SensitivityReport { distances, max_distance, bound, violations })
}
