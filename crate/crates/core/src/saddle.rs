//! The entropy-regularized minimax objective
//!
//! ```text
//! F(w, λ) = Σ_i λ_i L_i(w) + (μ_w/2)|w - w'|² - μ_λ Σ_j λ_j ln λ_j
//! ```
//!
//! over `W × Δ_p`, its saddle-point solvers and duality-gap certificates.
//!
//! `F(·, λ)` is `μ_w`-strongly convex and `F(w, ·)` is maximized in closed
//! form by `softmax(L(w)/μ_λ)`, so
//! `max_λ F(w, λ) = μ_λ lse(L(w)/μ_λ) + (μ_w/2)|w - w'|²`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numkit::{
    axpy, distance, dot, log_sum_exp, neg_entropy_term, softmax_weights, GroupWeights, ParamVector, RandomStream,
};
use crate::problem::{
    make_neighbor, AffineGenerator, DatasetCollection, GroupDistribution, GroupRisks, LossSpec, ParamSpace,
    SampleOracleSet,
};

/// Default tolerance of the inner minimization in [`duality_gap`].
pub const DEFAULT_INNER_TOL: f64 = 1e-9;
/// Iteration cap of the inner minimization.
pub const INNER_ITERATION_CAP: usize = 100_000;

/// `F(w, λ)` for fixed data, regularization weights and anchor `w'`.
///
/// The anchor may lie outside `W`; minimization is always over `W`.
#[derive(Debug, Clone)]
pub struct RegularizedObjective {
    risks: GroupRisks,
    space: ParamSpace,
    lipschitz: f64,
    range_bound: f64,
    mu_w: f64,
    mu_lambda: f64,
    anchor: Vec<f64>,
}

impl RegularizedObjective {
    pub fn new(
        collection: &DatasetCollection,
        loss: &LossSpec,
        space: &ParamSpace,
        mu_w: f64,
        mu_lambda: f64,
        anchor: Vec<f64>,
    ) -> Result<Self> {
        let risks = GroupRisks::from_collection(collection, loss)?;
        Self::from_risks(risks, loss, space, mu_w, mu_lambda, anchor)
    }

    /// Objective over exact population risks of finite distributions.
    pub fn from_distributions(
        dists: &[GroupDistribution],
        loss: &LossSpec,
        space: &ParamSpace,
        mu_w: f64,
        mu_lambda: f64,
        anchor: Vec<f64>,
    ) -> Result<Self> {
        let risks = GroupRisks::from_distributions(dists, loss)?;
        Self::from_risks(risks, loss, space, mu_w, mu_lambda, anchor)
    }

    pub fn from_risks(
        risks: GroupRisks,
        loss: &LossSpec,
        space: &ParamSpace,
        mu_w: f64,
        mu_lambda: f64,
        anchor: Vec<f64>,
    ) -> Result<Self> {
        if !(mu_w > 0.0 && mu_w.is_finite() && mu_lambda > 0.0 && mu_lambda.is_finite()) {
            return invalid(format!("regularization weights must be positive, got mu_w={mu_w}, mu_lambda={mu_lambda}"));
        }
        if anchor.len() != space.dim() || risks.dim() != space.dim() {
            return invalid("anchor, data and space dimensions must agree");
        }
        if anchor.iter().any(|a| !a.is_finite()) {
            return invalid("anchor must be finite");
        }
        Ok(Self {
            risks,
            space: space.clone(),
            lipschitz: loss.lipschitz,
            range_bound: loss.range_bound,
            mu_w,
            mu_lambda,
            anchor,
        })
    }

    pub fn groups(&self) -> usize {
        self.risks.groups()
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn space(&self) -> &ParamSpace {
        &self.space
    }

    pub fn anchor(&self) -> &[f64] {
        &self.anchor
    }

    pub fn mu_w(&self) -> f64 {
        self.mu_w
    }

    pub fn mu_lambda(&self) -> f64 {
        self.mu_lambda
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn range_bound(&self) -> f64 {
        self.range_bound
    }

    /// Per-group risks `L_i(w)`.
    pub fn group_risks(&self, w: &[f64]) -> Vec<f64> {
        self.risks.risks(w)
    }

    /// Bound on `|grad_w F(w, λ)|` over `W`: `L + μ_w max(M, r + |w' - c|)`.
    pub fn gradient_bound(&self) -> f64 {
        let reach = self.space.diameter.max(self.space.farthest_distance(&self.anchor));
        self.lipschitz + self.mu_w * reach
    }

    /// `(L + μ_w M)² (1 + ln N) / (2 μ_w N)`, the averaged-iterate gap bound
    /// (with `M` widened when the anchor lies outside `W`).
    pub fn averaged_gap_bound(&self, iterations: usize) -> f64 {
        averaged_gap_bound(self.gradient_bound(), self.mu_w, iterations)
    }

    fn reg(&self, w: &[f64]) -> f64 {
        let d = distance(w, &self.anchor);
        0.5 * self.mu_w * d * d
    }

    /// `grad_w F(w, λ)` for any `w`.
    fn grad_w(&self, w: &[f64], lambda: &[f64]) -> Vec<f64> {
        let mut g = self.risks.weighted_gradient(w, lambda);
        for ((gi, wi), ai) in g.iter_mut().zip(w).zip(&self.anchor) {
            *gi += self.mu_w * (wi - ai);
        }
        g
    }

    fn value_unchecked(&self, w: &[f64], lambda: &[f64]) -> f64 {
        let risks = self.risks.risks(w);
        let entropy: f64 = lambda.iter().filter(|&&l| l > 0.0).map(|&l| l * l.ln()).sum();
        dot(lambda, &risks) + self.reg(w) - self.mu_lambda * entropy
    }

    /// `max_λ F(w, λ) = μ_λ lse(L(w)/μ_λ) + (μ_w/2)|w - w'|²`.
    pub fn primal_value(&self, w: &[f64]) -> f64 {
        log_sum_exp(&self.risks.risks(w), self.mu_lambda) + self.reg(w)
    }

    fn check_point(&self, w: &[f64], lambda: &GroupWeights) -> Result<()> {
        if !self.space.contains(w) {
            return invalid("w lies outside the parameter space");
        }
        if lambda.len() != self.groups() {
            return invalid(format!("lambda has {} entries, expected {}", lambda.len(), self.groups()));
        }
        Ok(())
    }
}

fn averaged_gap_bound(gradient_bound: f64, mu_w: f64, iterations: usize) -> f64 {
    let n = iterations as f64;
    gradient_bound * gradient_bound * (1.0 + n.ln()) / (2.0 * mu_w * n)
}

/// `F(w, λ)`.
pub fn objective_value(obj: &RegularizedObjective, w: &[f64], lambda: &GroupWeights) -> Result<f64> {
    obj.check_point(w, lambda)?;
    Ok(obj.value_unchecked(w, lambda))
}

/// `F(w, λ)` together with `grad_w F(w, λ) = Σ_i λ_i grad L_i(w) + μ_w (w - w')`.
pub fn objective_with_gradient(
    obj: &RegularizedObjective,
    w: &[f64],
    lambda: &GroupWeights,
) -> Result<(f64, Vec<f64>)> {
    obj.check_point(w, lambda)?;
    Ok((obj.value_unchecked(w, lambda), obj.grad_w(w, lambda)))
}

/// The exact maximizer of `F(w, ·)`: `λ_i ∝ exp(L_i(w)/μ_λ)`.
pub fn best_response_lambda(obj: &RegularizedObjective, w: &[f64]) -> Result<GroupWeights> {
    softmax_weights(&obj.risks.risks(w), obj.mu_lambda)
}

/// How a saddle point was computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    /// Averaged best-response / projected-gradient iterates.
    Averaged { iterations: usize },
    /// Projected gradient on `max_λ F(·, λ)` stopped by a gap certificate.
    Primal { iterations: usize },
}

/// An approximate saddle point with a certified upper bound on its gap.
#[derive(Debug, Clone, PartialEq)]
pub struct SaddleCertificate {
    pub w_bar: ParamVector,
    pub lambda_bar: GroupWeights,
    pub gap_upper: f64,
    pub method: SolveMethod,
    /// False when the inner minimization stopped at its cap; `gap_upper`
    /// is then a looser but still valid bound.
    pub inner_converged: bool,
}

/// A sound upper bound on `max_λ' F(w, λ') - min_w' F(w', λ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapBound {
    pub upper: f64,
    /// Certified suboptimality left in the inner minimization.
    pub inner_slack: f64,
    pub inner_iterations: usize,
    pub converged: bool,
}

/// Strong-convexity lower model `f(x) + <g, y - x> + (μ/2)|y - x|²`
/// minimized over the ball.
fn lower_model_min(space: &ParamSpace, mu: f64, x: &[f64], fx: f64, g: &[f64]) -> f64 {
    let target: Vec<f64> = x.iter().zip(g).map(|(xi, gi)| xi - gi / mu).collect();
    let y = space.project(&target);
    let dy: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
    fx + dot(g, &dy) + 0.5 * mu * dot(&dy, &dy)
}

/// Aggregate of lower models `Σ θ_k [f_k + <g_k, y - x_k> + (μ/2)|y - x_k|²] / Σ θ_k`.
struct AggregateModel {
    weight: f64,
    constant: f64,
    grad: Vec<f64>,
    point: Vec<f64>,
    sq_norms: f64,
}

impl AggregateModel {
    fn new(dim: usize) -> Self {
        Self { weight: 0.0, constant: 0.0, grad: vec![0.0; dim], point: vec![0.0; dim], sq_norms: 0.0 }
    }

    fn add(&mut self, theta: f64, x: &[f64], fx: f64, g: &[f64]) {
        self.weight += theta;
        self.constant += theta * (fx - dot(g, x));
        axpy(theta, g, &mut self.grad);
        axpy(theta, x, &mut self.point);
        self.sq_norms += theta * dot(x, x);
    }

    fn minimum(&self, space: &ParamSpace, mu: f64) -> f64 {
        let s = 1.0 / self.weight;
        let gbar: Vec<f64> = self.grad.iter().map(|v| v * s).collect();
        let xbar: Vec<f64> = self.point.iter().map(|v| v * s).collect();
        let target: Vec<f64> = xbar.iter().zip(&gbar).map(|(x, g)| x - g / mu).collect();
        let y = space.project(&target);
        let dy: Vec<f64> = y.iter().zip(&xbar).map(|(a, b)| a - b).collect();
        self.constant * s + dot(&gbar, &y) + 0.5 * mu * (dot(&dy, &dy) + self.sq_norms * s - dot(&xbar, &xbar))
    }
}

/// Certified gap bound. The maximization over `λ'` is closed-form; the
/// minimization over `w'` runs projected subgradient steps `1/(μ_w k)` from
/// `w` and stops once the best value minus the best strong-convexity lower
/// bound is at most `inner_tol`, or after `cap` steps. A rounding allowance
/// of a few ulps of the compared magnitudes is added.
pub fn gap_bound(
    obj: &RegularizedObjective,
    w: &[f64],
    lambda: &GroupWeights,
    inner_tol: f64,
    cap: usize,
) -> Result<GapBound> {
    obj.check_point(w, lambda)?;
    if !(inner_tol > 0.0) {
        return invalid("inner tolerance must be positive");
    }
    let upper = obj.primal_value(w);
    let entropy = -obj.mu_lambda * neg_entropy_term(lambda);
    let mu = obj.mu_w;
    let inner_f = |x: &[f64]| dot(lambda, &obj.risks.risks(x)) + obj.reg(x) + entropy;

    let mut x = w.to_vec();
    let mut best_f = f64::INFINITY;
    let mut best_lb = f64::NEG_INFINITY;
    let mut aggregate = AggregateModel::new(obj.dim());
    let mut k = 0;
    let converged = loop {
        let fx = inner_f(&x);
        let g = obj.grad_w(&x, lambda);
        best_f = best_f.min(fx);
        best_lb = best_lb.max(lower_model_min(&obj.space, mu, &x, fx, &g));
        aggregate.add((k + 1) as f64, &x, fx, &g);
        if k > 0 {
            best_lb = best_lb.max(aggregate.minimum(&obj.space, mu));
        }
        if best_f - best_lb <= inner_tol {
            break true;
        }
        if k >= cap {
            break false;
        }
        k += 1;
        let step = 1.0 / (mu * k as f64);
        let target: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - step * gi).collect();
        x = obj.space.project(&target);
    };
    let rounding = 16.0 * f64::EPSILON * (upper.abs() + best_lb.abs() + best_f.abs());
    Ok(GapBound {
        upper: (upper - best_lb).max(0.0) + rounding,
        inner_slack: (best_f - best_lb).max(0.0),
        inner_iterations: k,
        converged,
    })
}

/// Upper bound on the duality gap of `(w, λ)`, within `inner_tol` of the true
/// gap. Fails with [`Error::NonConvergence`] if the inner minimization cannot
/// reach `inner_tol` within [`INNER_ITERATION_CAP`] steps.
pub fn duality_gap(obj: &RegularizedObjective, w: &[f64], lambda: &GroupWeights, inner_tol: f64) -> Result<f64> {
    let b = gap_bound(obj, w, lambda, inner_tol, INNER_ITERATION_CAP)?;
    if !b.converged {
        return Err(Error::NonConvergence { iterations: b.inner_iterations, best_bound: b.upper });
    }
    Ok(b.upper)
}

fn average(sum: &[f64], n: usize) -> Vec<f64> {
    sum.iter().map(|s| s / n as f64).collect()
}

/// Averaged best-response dynamics: for `t = 1..N-1`, `λ_t = BR(w_t)` and
/// `w_{t+1} = Proj(w_t - grad_w F(w_t, λ_t) / (μ_w t))`; `λ_N = BR(w_N)`.
/// Returns the averages of `w_1..w_N` and `λ_1..λ_N` with a certified gap.
pub fn solve_sc_sc(obj: &RegularizedObjective, iterations: usize, w_init: &[f64]) -> Result<SaddleCertificate> {
    if iterations < 1 {
        return invalid("need at least one iteration");
    }
    if !obj.space.contains(w_init) {
        return invalid("initial point lies outside the parameter space");
    }
    let (d, p) = (obj.dim(), obj.groups());
    let mut w = w_init.to_vec();
    let mut sum_w = vec![0.0; d];
    let mut sum_l = vec![0.0; p];
    for t in 1..=iterations {
        let lambda = best_response_lambda(obj, &w)?;
        axpy(1.0, &w, &mut sum_w);
        axpy(1.0, &lambda, &mut sum_l);
        if t == iterations {
            break;
        }
        let g = obj.grad_w(&w, &lambda);
        let step = 1.0 / (obj.mu_w * t as f64);
        let target: Vec<f64> = w.iter().zip(&g).map(|(wi, gi)| wi - step * gi).collect();
        w = obj.space.project(&target);
    }
    let w_bar = obj.space.project(&average(&sum_w, iterations));
    let lambda_bar = GroupWeights::normalized(average(&sum_l, iterations))?;
    let gap = gap_bound(obj, &w_bar, &lambda_bar, DEFAULT_INNER_TOL, INNER_ITERATION_CAP)?;
    Ok(SaddleCertificate {
        w_bar: ParamVector(w_bar),
        lambda_bar,
        gap_upper: gap.upper,
        method: SolveMethod::Averaged { iterations },
        inner_converged: gap.converged,
    })
}

/// Smallest `N` with `(L + μ_w M)² (1 + ln N) / (2 μ_w N) <= alpha`, by
/// doubling then bisection.
pub fn iterations_for_alpha(alpha: f64, mu_w: f64, lipschitz: f64, diameter: f64) -> Result<usize> {
    if !(alpha > 0.0) {
        return invalid("alpha must be positive");
    }
    if !(mu_w > 0.0 && lipschitz >= 0.0 && diameter > 0.0) {
        return invalid("mu_w, L and M must be positive");
    }
    Ok(iterations_for_bound(alpha, mu_w, lipschitz + mu_w * diameter))
}

fn iterations_for_bound(alpha: f64, mu_w: f64, gradient_bound: f64) -> usize {
    let ok = |n: usize| averaged_gap_bound(gradient_bound, mu_w, n) <= alpha;
    if ok(1) {
        return 1;
    }
    let mut hi = 2usize;
    while !ok(hi) {
        if hi >= 1 << 62 {
            return usize::MAX;
        }
        hi *= 2;
    }
    let mut lo = hi / 2;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Certified projected gradient on `Φ(w) = max_λ F(w, λ)` with backtracking.
/// Stops once `(w, BR(w))` has certified gap at most `alpha`.
pub fn solve_primal(
    obj: &RegularizedObjective,
    alpha: f64,
    w_init: &[f64],
    max_iterations: usize,
) -> Result<SaddleCertificate> {
    if !(alpha > 0.0) {
        return invalid("alpha must be positive");
    }
    if !obj.space.contains(w_init) {
        return invalid("initial point lies outside the parameter space");
    }
    let inner_tol = (alpha / 10.0).min(DEFAULT_INNER_TOL);
    let mut w = w_init.to_vec();
    let mut smooth = obj.mu_w;
    let mut best = f64::INFINITY;
    for k in 0..=max_iterations {
        let lambda = best_response_lambda(obj, &w)?;
        let gap = gap_bound(obj, &w, &lambda, inner_tol, INNER_ITERATION_CAP)?;
        best = best.min(gap.upper);
        if gap.upper <= alpha {
            return Ok(SaddleCertificate {
                w_bar: ParamVector(w),
                lambda_bar: lambda,
                gap_upper: gap.upper,
                method: SolveMethod::Primal { iterations: k },
                inner_converged: gap.converged,
            });
        }
        if k == max_iterations {
            break;
        }
        let phi = obj.primal_value(&w);
        let g = obj.grad_w(&w, &lambda);
        loop {
            let target: Vec<f64> = w.iter().zip(&g).map(|(wi, gi)| wi - gi / smooth).collect();
            let next = obj.space.project(&target);
            let dw: Vec<f64> = next.iter().zip(&w).map(|(a, b)| a - b).collect();
            let model = phi + dot(&g, &dw) + 0.5 * smooth * dot(&dw, &dw);
            if obj.primal_value(&next) <= model + 1e-15 * phi.abs().max(1.0) || smooth > 1e300 {
                w = next;
                break;
            }
            smooth *= 2.0;
        }
        smooth = (smooth / 2.0).max(obj.mu_w);
    }
    Err(Error::NonConvergence { iterations: max_iterations, best_bound: best })
}

/// Strategy for reaching an `alpha`-saddle point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum SaddleSolver {
    /// [`solve_sc_sc`] with `N` from [`iterations_for_alpha`].
    Averaged,
    /// [`solve_primal`].
    Primal { max_iterations: usize },
    /// Averaged when the required `N` is at most `averaged_cap`, else primal.
    Auto { averaged_cap: usize, max_iterations: usize },
}

impl Default for SaddleSolver {
    fn default() -> Self {
        SaddleSolver::Auto { averaged_cap: 200_000, max_iterations: 1_000_000 }
    }
}

/// An `alpha`-saddle point of `obj`, starting from `w_init`.
pub fn solve_to_alpha(
    obj: &RegularizedObjective,
    alpha: f64,
    w_init: &[f64],
    solver: SaddleSolver,
) -> Result<SaddleCertificate> {
    if !(alpha > 0.0) {
        return invalid("alpha must be positive");
    }
    let averaged_n = iterations_for_bound(alpha, obj.mu_w, obj.gradient_bound());
    match solver {
        SaddleSolver::Averaged => solve_sc_sc(obj, averaged_n, w_init),
        SaddleSolver::Primal { max_iterations } => solve_primal(obj, alpha, w_init, max_iterations),
        SaddleSolver::Auto { averaged_cap, max_iterations } => {
            if averaged_n <= averaged_cap {
                solve_sc_sc(obj, averaged_n, w_init)
            } else {
                solve_primal(obj, alpha, w_init, max_iterations)
            }
        }
    }
}

/// Regularization weights of the non-private reference:
/// `μ_w = (D/M) sqrt(p/K) sqrt(ln(K/p) ln K)` and
/// `μ_λ = D sqrt(p ln(K/p) ln K / (K ln p))`, with `μ_λ = D` when `p = 1`.
pub fn baseline_regularization(budget: usize, groups: usize, loss: &LossSpec, space: &ParamSpace) -> Result<(f64, f64)> {
    let (k, p) = (budget as f64, groups as f64);
    if budget < 2 * groups || groups == 0 {
        return Err(Error::InstanceTooSmall(format!("baseline needs K >= 2p, got K={budget}, p={groups}")));
    }
    let d = loss.scale();
    let logs = ((k / p).ln() * k.ln()).sqrt();
    let mu_w = d / space.diameter * (p / k).sqrt() * logs;
    let mu_lambda = if groups == 1 { d } else { d * (p * (k / p).ln() * k.ln() / (k * p.ln())).sqrt() };
    Ok((mu_w, mu_lambda))
}

/// Non-private regularized ERM on `K/p` fresh draws per group, anchored and
/// started at the center of `W`, solved to a gap of `1e-8 D M`.
pub fn nonprivate_baseline(
    oracles: &mut SampleOracleSet,
    budget: usize,
    loss: &LossSpec,
    space: &ParamSpace,
    rng: &mut RandomStream,
) -> Result<ParamVector> {
    let p = oracles.groups();
    let (mu_w, mu_lambda) = baseline_regularization(budget, p, loss, space)?;
    let collection = oracles.draw_collection(budget / p, rng)?;
    let obj = RegularizedObjective::new(&collection, loss, space, mu_w, mu_lambda, space.center.clone())?;
    let alpha = 1e-8 * loss.scale() * space.diameter;
    Ok(solve_to_alpha(&obj, alpha, &space.center, SaddleSolver::default())?.w_bar)
}

/// Target gap used by the stability argument:
/// `L²/(8 n² μ_w) + B²/(8 n² μ_λ)`.
pub fn stability_alpha(lipschitz: f64, range_bound: f64, n: usize, mu_w: f64, mu_lambda: f64) -> f64 {
    let n2 = (n * n) as f64;
    lipschitz * lipschitz / (8.0 * n2 * mu_w) + range_bound * range_bound / (8.0 * n2 * mu_lambda)
}

/// `(3/n)(L/μ_w + B/sqrt(μ_w μ_λ))`.
pub fn stability_bound(lipschitz: f64, range_bound: f64, n: usize, mu_w: f64, mu_lambda: f64) -> f64 {
    3.0 / n as f64 * (lipschitz / mu_w + range_bound / (mu_w * mu_lambda).sqrt())
}

/// Random affine instances for [`stability_probe`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilitySetup {
    pub d: usize,
    pub p: usize,
    pub n: usize,
    pub lipschitz: f64,
    pub diameter: f64,
    pub mu_w: f64,
    pub mu_lambda: f64,
}

impl Default for StabilitySetup {
    fn default() -> Self {
        Self { d: 2, p: 3, n: 64, lipschitz: 1.0, diameter: 1.0, mu_w: 5.0, mu_lambda: 0.625 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub distances: Vec<f64>,
    pub max_distance: f64,
    pub mean_distance: f64,
    pub bound: f64,
    pub alpha: f64,
    pub iterations: usize,
    pub violations: usize,
}

/// Distance between the averaged solutions on two collections.
pub fn solution_distance(
    a: &DatasetCollection,
    b: &DatasetCollection,
    loss: &LossSpec,
    space: &ParamSpace,
    mu_w: f64,
    mu_lambda: f64,
    iterations: usize,
) -> Result<f64> {
    let solve = |c: &DatasetCollection| -> Result<Vec<f64>> {
        let obj = RegularizedObjective::new(c, loss, space, mu_w, mu_lambda, space.center.clone())?;
        Ok(solve_sc_sc(&obj, iterations, &space.center)?.w_bar.into_inner())
    };
    Ok(distance(&solve(a)?, &solve(b)?))
}

/// Per trial: a random affine collection and a random single-entry neighbor,
/// both solved by [`solve_sc_sc`] to the stability gap; records the distance
/// of the solutions. Trial `k` draws from `rng.child(k)`; trials run in
/// parallel.
pub fn stability_probe(setup: &StabilitySetup, trials: usize, rng: &RandomStream) -> Result<StabilityReport> {
    if trials < 1 {
        return invalid("need at least one trial");
    }
    let probe_space = ParamSpace::centered(setup.d, setup.diameter)?;
    let loss = crate::problem::make_loss(crate::problem::LossKind::Affine, setup.d, &probe_space, setup.lipschitz)?;
    let alpha = stability_alpha(loss.lipschitz, loss.range_bound, setup.n, setup.mu_w, setup.mu_lambda);
    let iterations = iterations_for_alpha(alpha, setup.mu_w, loss.lipschitz, setup.diameter)?;
    let bound = stability_bound(loss.lipschitz, loss.range_bound, setup.n, setup.mu_w, setup.mu_lambda);
    let distances = (0..trials as u64)
        .into_par_iter()
        .map(|k| {
            let mut r = rng.child(k);
            let gen = AffineGenerator::new(setup.d, setup.p, setup.lipschitz, setup.diameter, &mut r)?;
            let coll = gen.collection(setup.n, &mut r)?;
            let group = r.index_below(setup.p);
            let index = r.index_below(setup.n);
            let neighbor = make_neighbor(&coll, group, index, gen.sample_any(&mut r))?;
            solution_distance(&coll, &neighbor, &gen.loss, &gen.space, setup.mu_w, setup.mu_lambda, iterations)
        })
        .collect::<Result<Vec<_>>>()?;
    let max_distance = distances.iter().copied().fold(0.0, f64::max);
    let mean_distance = distances.iter().sum::<f64>() / trials as f64;
    let violations = distances.iter().filter(|&&x| x > bound).count();
    Ok(StabilityReport { distances, max_distance, mean_distance, bound, alpha, iterations, violations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{build_two_point_instance, constant_loss_collection, make_loss, DataPoint, LossKind};

    fn constant_objective(p: usize, mu_w: f64, mu_lambda: f64) -> RegularizedObjective {
        let (space, loss, coll) = constant_loss_collection(2, p, 3, 0.0, 2.0).unwrap();
        RegularizedObjective::new(&coll, &loss, &space, mu_w, mu_lambda, vec![0.0, 0.0]).unwrap()
    }

    fn two_point_objective(mu_w: f64, mu_lambda: f64) -> RegularizedObjective {
        let inst = build_two_point_instance();
        RegularizedObjective::from_distributions(&inst.groups, &inst.loss, &inst.space, mu_w, mu_lambda, vec![0.0])
            .unwrap()
    }

    #[test]
    fn objective_examples() {
        let obj = constant_objective(3, 1.0, 1.0);
        assert_eq!(objective_value(&obj, &[0.0, 0.0], &GroupWeights::one_hot(3, 0)).unwrap(), 0.0);
        let obj = constant_objective(4, 1.0, 1.0);
        let v = objective_value(&obj, &[0.0, 0.0], &GroupWeights::uniform(4)).unwrap();
        assert!((v - 4f64.ln()).abs() < 1e-12);
        assert!(objective_value(&obj, &[2.0, 0.0], &GroupWeights::uniform(4)).is_err());
    }

    #[test]
    fn best_response_examples() {
        let mu = 0.7;
        let space = ParamSpace::centered(1, 2.0).unwrap();
        let loss = make_loss(LossKind::Affine, 1, &space, 1.0).unwrap();
        let coll = DatasetCollection::new(vec![
            vec![DataPoint::new(vec![0.0], 0.0)],
            vec![DataPoint::new(vec![0.0], mu * 2f64.ln())],
        ])
        .unwrap();
        let obj = RegularizedObjective::new(&coll, &loss, &space, 1.0, mu, vec![0.0]).unwrap();
        let l = best_response_lambda(&obj, &[0.3]).unwrap();
        assert!((l[0] - 1.0 / 3.0).abs() < 1e-12 && (l[1] - 2.0 / 3.0).abs() < 1e-12);
        let obj = constant_objective(3, 1.0, 1.0);
        assert_eq!(best_response_lambda(&obj, &[0.1, 0.1]).unwrap(), GroupWeights::uniform(3));
    }

    #[test]
    fn iterations_for_alpha_examples() {
        assert_eq!(iterations_for_alpha(0.1, 1.0, 1.0, 1.0).unwrap(), 115);
        assert!(averaged_gap_bound(2.0, 1.0, 114) > 0.1);
        let at_one = averaged_gap_bound(2.0, 1.0, 1);
        assert_eq!(iterations_for_alpha(at_one, 1.0, 1.0, 1.0).unwrap(), 1);
        let mut prev = 0;
        let mut a = 1.0;
        for _ in 0..20 {
            let n = iterations_for_alpha(a, 1.0, 1.0, 1.0).unwrap();
            assert!(n >= prev);
            prev = n;
            a /= 2.0;
        }
        assert!(iterations_for_alpha(0.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn constant_loss_converges_to_anchor() {
        let obj = constant_objective(3, 1.0, 1.0);
        let cert = solve_sc_sc(&obj, 10_000, &[0.5, -0.5]).unwrap();
        assert!(distance(&cert.w_bar, obj.anchor()) <= 1e-3);
        assert!(cert.lambda_bar.iter().all(|l| (l - 1.0 / 3.0).abs() < 1e-12));
        let at_anchor = solve_sc_sc(&obj, 10_000, &[0.0, 0.0]).unwrap();
        assert!(distance(&at_anchor.w_bar, obj.anchor()) <= 1e-6);
        assert!(at_anchor.gap_upper <= DEFAULT_INNER_TOL);
    }

    #[test]
    fn gap_lower_bound_from_regularizer() {
        let obj = constant_objective(3, 2.0, 1.0);
        let w = [1.0, 0.0];
        let gap = duality_gap(&obj, &w, &GroupWeights::one_hot(3, 1), 1e-9).unwrap();
        assert!(gap >= 0.5 * 2.0 * 1.0);
    }

    #[test]
    fn gap_matches_grid_in_one_dimension() {
        let obj = two_point_objective(0.8, 0.3);
        let grid: Vec<f64> = (0..=20_000).map(|k| -1.0 + k as f64 * 1e-4).collect();
        for (w, l0) in [(0.2, 0.3), (-0.7, 0.9), (0.0, 0.5)] {
            let lambda = GroupWeights::new(vec![l0, 1.0 - l0]).unwrap();
            let gap = duality_gap(&obj, &[w], &lambda, 1e-10).unwrap();
            let mut lmax = f64::NEG_INFINITY;
            for k in 0..=20_000 {
                let a = k as f64 / 20_000.0;
                let lam = GroupWeights::new(vec![a, 1.0 - a]).unwrap();
                lmax = lmax.max(objective_value(&obj, &[w], &lam).unwrap());
            }
            let wmin = grid.iter().map(|v| objective_value(&obj, &[*v], &lambda).unwrap()).fold(f64::INFINITY, f64::min);
            let grid_gap = lmax - wmin;
            assert!(gap >= grid_gap - 1e-9, "gap {gap} below grid {grid_gap}");
            assert!(gap <= grid_gap + 1e-4, "gap {gap} far above grid {grid_gap}");
        }
    }

    #[test]
    fn two_point_gap_decreases() {
        let obj = two_point_objective(1.0, 0.5);
        let g50 = solve_sc_sc(&obj, 50, &[0.9]).unwrap().gap_upper;
        let g1000 = solve_sc_sc(&obj, 1000, &[0.9]).unwrap().gap_upper;
        assert!(g1000 < g50);
        for n in [100, 1000] {
            let cert = solve_sc_sc(&obj, n, &[0.9]).unwrap();
            assert!(cert.gap_upper <= obj.averaged_gap_bound(n));
        }
    }

    #[test]
    fn primal_solver_reaches_alpha() {
        let obj = two_point_objective(3.0, 0.05);
        let cert = solve_primal(&obj, 1e-8, &[0.5], 100_000).unwrap();
        assert!(cert.gap_upper <= 1e-8);
        assert!(cert.w_bar[0].abs() < 1e-3);
        let auto = solve_to_alpha(&obj, 1e-3, &[0.0], SaddleSolver::default()).unwrap();
        assert!(matches!(auto.method, SolveMethod::Averaged { .. }));
    }

    #[test]
    fn hinge_gap_is_sound() {
        let space = ParamSpace::centered(2, 2.0).unwrap();
        let loss = make_loss(LossKind::Hinge, 2, &space, 1.0).unwrap();
        let mut rng = RandomStream::new(3);
        let datasets = (0..2)
            .map(|g| {
                (0..5)
                    .map(|_| {
                        let x = crate::problem::uniform_in_ball(&[0.0, 0.0], 1.0, &mut rng);
                        DataPoint::new(x, if g == 0 { 1.0 } else { -1.0 })
                    })
                    .collect()
            })
            .collect();
        let coll = DatasetCollection::new(datasets).unwrap();
        let obj = RegularizedObjective::new(&coll, &loss, &space, 1.0, 0.5, vec![0.0, 0.0]).unwrap();
        let cert = solve_sc_sc(&obj, 2000, &[0.0, 0.0]).unwrap();
        assert!(cert.gap_upper >= 0.0);
        assert!(cert.gap_upper <= obj.averaged_gap_bound(2000));
    }

    #[test]
    fn stability_bound_example() {
        let b = stability_bound(1.0, 1.0, 64, 5.0, 0.625);
        assert!((b - 3.0 / 64.0 * (0.2 + 1.0 / 3.125f64.sqrt())).abs() < 1e-15);
        assert!((b - 0.0358).abs() < 1e-4);
    }

    #[test]
    fn identical_neighbor_has_zero_distance() {
        let mut rng = RandomStream::new(12);
        let gen = AffineGenerator::new(2, 3, 1.0, 1.0, &mut rng).unwrap();
        let coll = gen.collection(16, &mut rng).unwrap();
        let same = make_neighbor(&coll, 0, 0, coll.dataset(0)[0].clone()).unwrap();
        assert_eq!(solution_distance(&coll, &same, &gen.loss, &gen.space, 5.0, 0.625, 500).unwrap(), 0.0);
    }

    #[test]
    fn baseline_two_point() {
        let inst = build_two_point_instance();
        let mut total = 0.0;
        for seed in 0..10 {
            let mut oracles = SampleOracleSet::new(inst.groups.clone(), 4096).unwrap();
            let mut rng = RandomStream::new(seed);
            let w = nonprivate_baseline(&mut oracles, 4096, &inst.loss, &inst.space, &mut rng).unwrap();
            let (r, _) = crate::problem::worst_group_population(&inst.groups, &w, &inst.loss).unwrap();
            total += r - 1.0;
        }
        assert!(total / 10.0 <= 0.1);
    }

    #[test]
    fn baseline_single_group_matches_erm() {
        let space = ParamSpace::centered(1, 2.0).unwrap();
        let loss = make_loss(LossKind::Affine, 1, &space, 1.0).unwrap();
        let dist = GroupDistribution::point_mass(DataPoint::new(vec![1.0], 1.0));
        let mut oracles = SampleOracleSet::new(vec![dist], 4096).unwrap();
        let w = nonprivate_baseline(&mut oracles, 4096, &loss, &space, &mut RandomStream::new(0)).unwrap();
        assert!((w[0] + 1.0).abs() <= 2.0 * 1e-2);
    }
}
