//! The two-player game solver: a private online convex optimizer for `w`
//! against an EXP3 player for `λ` fed Laplace-privatized losses.
//!
//! Each round samples a group `i_t ~ λ_t`, draws two fresh points from that
//! group, gives `l(·, x⁻)` to the `w`-player and the clipped, noised reward
//! estimate `U - l(w_t, x⁺) + Lap(B/ε)` to the `λ`-player. The `w`-player
//! here is DP-FTRL with binary-tree prefix noise.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mechanisms::{laplace_noise, tree_sigma_node, PrivacyBudget, TreeNoise};
use crate::numkit::{axpy, norm, sample_categorical, GroupWeights, ParamVector, RandomStream};
use crate::problem::{DataPoint, LossSpec, ParamSpace, SampleOracleSet};

/// Smallest weight kept after an EXP3 update.
pub const WEIGHT_FLOOR: f64 = 1e-300;

/// State of a lazy projected online learner.
#[derive(Debug, Clone, PartialEq)]
pub struct OcoState {
    pub w1: Vec<f64>,
    pub current: Vec<f64>,
    pub gradient_sum: Vec<f64>,
    /// Number of gradients absorbed.
    pub t: usize,
    /// Gradients longer than this are rescaled to it.
    pub clip_norm: f64,
    pub clip_events: usize,
}

impl OcoState {
    pub fn new(w1: Vec<f64>, clip_norm: f64) -> Self {
        let d = w1.len();
        Self { current: w1.clone(), w1, gradient_sum: vec![0.0; d], t: 0, clip_norm, clip_events: 0 }
    }
}

/// `w_{t+1} = Proj_W(w_1 - η (Σ_{s<=t} g_s + noise))`, clipping `g_t` to
/// `state.clip_norm` first.
pub fn dp_ftrl_next(state: &mut OcoState, gradient: &[f64], noise: &[f64], space: &ParamSpace, eta: f64) -> ParamVector {
    let gn = norm(gradient);
    if gn > state.clip_norm {
        state.clip_events += 1;
        axpy(state.clip_norm / gn, gradient, &mut state.gradient_sum);
    } else {
        axpy(1.0, gradient, &mut state.gradient_sum);
    }
    state.t += 1;
    let target: Vec<f64> = state
        .w1
        .iter()
        .zip(&state.gradient_sum)
        .zip(noise)
        .map(|((w, g), z)| w - eta * (g + z))
        .collect();
    state.current = space.project(&target);
    ParamVector(state.current.clone())
}

/// A private online convex optimizer over `W`.
///
/// Implementations must be `(ε, δ)`-DP with respect to replacing one datum
/// of the stream fed to [`DpOco::next`].
pub trait DpOco {
    /// The iterate the next loss will be evaluated at.
    fn current(&self) -> &[f64];

    /// Absorbs `l(·, z)` at the current iterate and returns the next iterate.
    fn next(&mut self, loss: &LossSpec, z: &DataPoint) -> Result<ParamVector>;

    fn privacy(&self) -> PrivacyBudget;

    /// Gradients clipped so far.
    fn clip_events(&self) -> usize {
        0
    }
}

/// DP-FTRL with tree-aggregated Gaussian noise on gradient prefix sums.
#[derive(Debug, Clone)]
pub struct DpFtrl {
    state: OcoState,
    space: ParamSpace,
    eta: f64,
    tree: TreeNoise,
    privacy: PrivacyBudget,
}

impl DpFtrl {
    /// Node noise `(2L/ε) sqrt(2 ceil(log2 T) ln(1.25/δ))` and step
    /// `M / (L sqrt(T)) / (1 + σ_node sqrt(d) / L)` unless `eta` is given.
    pub fn new(
        space: &ParamSpace,
        lipschitz: f64,
        horizon: usize,
        privacy: PrivacyBudget,
        eta: Option<f64>,
        stream: RandomStream,
    ) -> Result<Self> {
        if horizon < 1 {
            return invalid("horizon must be >= 1");
        }
        if !(lipschitz > 0.0) {
            return invalid("Lipschitz bound must be positive");
        }
        let sigma_node = tree_sigma_node(lipschitz, horizon, privacy);
        let eta = eta.unwrap_or_else(|| default_ftrl_eta(space, lipschitz, horizon, sigma_node));
        if !(eta > 0.0) {
            return invalid("FTRL step must be positive");
        }
        Ok(Self {
            state: OcoState::new(space.center.clone(), lipschitz),
            space: space.clone(),
            eta,
            tree: TreeNoise::new(horizon, sigma_node, space.dim(), stream)?,
            privacy,
        })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn sigma_node(&self) -> f64 {
        self.tree.sigma_node()
    }

    pub fn state(&self) -> &OcoState {
        &self.state
    }
}

pub fn default_ftrl_eta(space: &ParamSpace, lipschitz: f64, horizon: usize, sigma_node: f64) -> f64 {
    let d = space.dim() as f64;
    space.diameter / (lipschitz * (horizon as f64).sqrt()) / (1.0 + sigma_node * d.sqrt() / lipschitz)
}

impl DpOco for DpFtrl {
    fn current(&self) -> &[f64] {
        &self.state.current
    }

    fn next(&mut self, loss: &LossSpec, z: &DataPoint) -> Result<ParamVector> {
        let g = loss.gradient(&self.state.current, z);
        let noise = self.tree.prefix(self.state.t + 1)?;
        Ok(dp_ftrl_next(&mut self.state, &g, &noise, &self.space, self.eta))
    }

    fn privacy(&self) -> PrivacyBudget {
        self.privacy
    }

    fn clip_events(&self) -> usize {
        self.state.clip_events
    }
}

/// Weights proportional to `exp(logs_i)`, floored at [`WEIGHT_FLOOR`];
/// returns the number of floored entries.
fn normalize_logs(logs: &[f64]) -> Result<(GroupWeights, usize)> {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let mut floored = 0;
    let weights: Vec<f64> = exps
        .iter()
        .map(|e| {
            let v = e / total;
            if v < WEIGHT_FLOOR {
                floored += 1;
                WEIGHT_FLOOR
            } else {
                v
            }
        })
        .collect();
    Ok((GroupWeights::normalized(weights)?, floored))
}

/// EXP3 step: `λ_{i} <- λ_{i} exp(-η ℓ̃ / λ_{i})` for `i = i_t` only, then
/// normalize. Computed in the log domain; entries that would underflow are
/// raised to [`WEIGHT_FLOOR`] and counted.
pub fn exp3_update_counted(lambda: &GroupWeights, arm: usize, loss_est: f64, eta: f64) -> Result<(GroupWeights, usize)> {
    if arm >= lambda.len() {
        return invalid(format!("arm {arm} out of range"));
    }
    let li = lambda[arm];
    if li <= 0.0 {
        return Err(Error::DegenerateWeight { index: arm });
    }
    if loss_est == 0.0 || eta == 0.0 {
        return Ok((lambda.clone(), 0));
    }
    let logs: Vec<f64> = lambda
        .iter()
        .enumerate()
        .map(|(i, l)| if i == arm { l.ln() - eta * loss_est / li } else { l.ln() })
        .collect();
    normalize_logs(&logs)
}

pub fn exp3_update(lambda: &GroupWeights, arm: usize, loss_est: f64, eta: f64) -> Result<GroupWeights> {
    exp3_update_counted(lambda, arm, loss_est, eta).map(|(l, _)| l)
}

/// Full-information multiplicative weights: `λ_i <- λ_i exp(-η ℓ_i)`, normalized.
pub fn hedge_update_counted(lambda: &GroupWeights, losses: &[f64], eta: f64) -> Result<(GroupWeights, usize)> {
    if losses.len() != lambda.len() {
        return invalid("loss vector length does not match the number of groups");
    }
    if eta == 0.0 {
        return Ok((lambda.clone(), 0));
    }
    let logs: Vec<f64> = lambda.iter().zip(losses).map(|(l, x)| l.ln() - eta * x).collect();
    normalize_logs(&logs)
}

pub fn hedge_update(lambda: &GroupWeights, losses: &[f64], eta: f64) -> Result<GroupWeights> {
    hedge_update_counted(lambda, losses, eta).map(|(l, _)| l)
}

/// The importance-weighted estimate of a loss vector from one observed
/// coordinate: `ℓ̃ / λ_{i_t}` at `i_t`, zero elsewhere.
pub fn importance_weighted_estimate(lambda: &GroupWeights, arm: usize, observed: f64) -> Vec<f64> {
    let mut v = vec![0.0; lambda.len()];
    v[arm] = observed / lambda[arm];
    v
}

/// Regret of Hedge on a fixed loss sequence:
/// `Σ_t <λ_t, ℓ_t> - min_i Σ_t ℓ_{t,i}`.
pub fn hedge_regret(losses: &[Vec<f64>], eta: f64) -> Result<f64> {
    let p = losses.first().map_or(0, Vec::len);
    if p == 0 {
        return invalid("empty loss sequence");
    }
    let mut lambda = GroupWeights::uniform(p);
    let mut incurred = 0.0;
    let mut totals = vec![0.0; p];
    for l in losses {
        incurred += crate::numkit::dot(&lambda, l);
        axpy(1.0, l, &mut totals);
        lambda = hedge_update(&lambda, l, eta)?;
    }
    Ok(incurred - totals.iter().copied().fold(f64::INFINITY, f64::min))
}

/// Pseudo-regret of EXP3 on a fixed loss sequence,
/// `Σ_t <λ_t, ℓ_t> - min_i Σ_t ℓ_{t,i}`, averaged over `replays` runs.
pub fn exp3_regret(losses: &[Vec<f64>], eta: f64, replays: usize, rng: &mut RandomStream) -> Result<f64> {
    let p = losses.first().map_or(0, Vec::len);
    if p == 0 || replays == 0 {
        return invalid("need a nonempty loss sequence and at least one replay");
    }
    let mut totals = vec![0.0; p];
    for l in losses {
        axpy(1.0, l, &mut totals);
    }
    let best = totals.iter().copied().fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for _ in 0..replays {
        let mut lambda = GroupWeights::uniform(p);
        let mut incurred = 0.0;
        for l in losses {
            incurred += crate::numkit::dot(&lambda, l);
            let arm = sample_categorical(&lambda, rng);
            lambda = exp3_update(&lambda, arm, l[arm], eta)?;
        }
        sum += incurred - best;
    }
    Ok(sum / replays as f64)
}

/// Game parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    pub rounds: usize,
    pub privacy: PrivacyBudget,
    /// Clip level `U = B + (2B/ε) ln T`.
    pub clip_level: f64,
    /// `sqrt(ln p / (p T U²))`.
    pub eta_exp3: f64,
    /// Laplace scale `B/ε` of the reward noise.
    pub laplace_scale: f64,
}

impl GameConfig {
    pub fn new(rounds: usize, groups: usize, range_bound: f64, privacy: PrivacyBudget) -> Result<Self> {
        if rounds < 2 {
            return invalid("the game needs T >= 2");
        }
        if groups == 0 {
            return invalid("p must be >= 1");
        }
        let t = rounds as f64;
        let laplace_scale = if privacy.is_private() { range_bound / privacy.epsilon } else { 0.0 };
        let clip_level = range_bound + 2.0 * laplace_scale * t.ln();
        let p = groups as f64;
        let eta_exp3 = (p.ln() / (p * t * clip_level * clip_level)).sqrt();
        Ok(Self { rounds, privacy, clip_level, eta_exp3, laplace_scale })
    }

    /// `2(T - 1)`.
    pub fn draws_needed(&self) -> usize {
        2 * (self.rounds - 1)
    }
}

/// Events counted during a game.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct GameCounters {
    pub clip_events: usize,
    pub underflow_events: usize,
    /// Rounds with `|y_t| > (2B/ε) ln T`.
    pub laplace_exceed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameRun {
    pub w_bar: ParamVector,
    pub lambda_bar: GroupWeights,
    pub draws_used: usize,
    pub counters: GameCounters,
}

/// Plays `T - 1` rounds and returns the averages of `w_1..w_T` and
/// `λ_1..λ_T`. Group choices come from `rng.child(0)`, `x⁻` from
/// `rng.child(1)`, `x⁺` from `rng.child(2)` and reward noise from
/// `rng.child(3)`.
pub fn run_game(
    oracles: &mut SampleOracleSet,
    config: &GameConfig,
    oco: &mut dyn DpOco,
    loss: &LossSpec,
    space: &ParamSpace,
    rng: &RandomStream,
) -> Result<GameRun> {
    if oracles.remaining() < config.draws_needed() {
        return Err(Error::BudgetExhausted {
            requested: config.draws_needed(),
            used: oracles.draws_used(),
            budget: oracles.budget(),
        });
    }
    let (mut pick_rng, mut minus_rng, mut plus_rng, mut noise_rng) = (rng.child(0), rng.child(1), rng.child(2), rng.child(3));
    let p = oracles.groups();
    let start = oracles.draws_used();
    let threshold = 2.0 * config.laplace_scale * (config.rounds as f64).ln();
    let mut counters = GameCounters::default();
    let mut lambda = GroupWeights::uniform(p);
    let mut sum_w = oco.current().to_vec();
    let mut sum_l = lambda.to_vec();
    for _ in 1..config.rounds {
        let arm = sample_categorical(&lambda, &mut pick_rng);
        let x_minus = oracles.draw(arm, &mut minus_rng)?;
        let x_plus = oracles.draw(arm, &mut plus_rng)?;
        let reward = loss.value(oco.current(), &x_plus);
        let w_next = oco.next(loss, &x_minus)?;
        if !space.contains(&w_next) {
            return Err(Error::ContractViolation("online player left the parameter space".into()));
        }
        let y = laplace_noise(config.laplace_scale, &mut noise_rng)?;
        if y.abs() > threshold && config.laplace_scale > 0.0 {
            counters.laplace_exceed += 1;
        }
        let estimate = config.clip_level - reward + y;
        let (next, floored) = exp3_update_counted(&lambda, arm, estimate, config.eta_exp3)?;
        counters.underflow_events += floored;
        lambda = next;
        axpy(1.0, &w_next, &mut sum_w);
        axpy(1.0, &lambda, &mut sum_l);
    }
    counters.clip_events = oco.clip_events();
    let t = config.rounds as f64;
    let w_bar = space.project(&sum_w.iter().map(|v| v / t).collect::<Vec<_>>());
    let lambda_bar = GroupWeights::normalized(sum_l.iter().map(|v| v / t).collect())?;
    Ok(GameRun { w_bar: ParamVector(w_bar), lambda_bar, draws_used: oracles.draws_used() - start, counters })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{build_two_point_instance, make_loss, GroupDistribution, LossKind};

    #[test]
    fn ftrl_examples() {
        let space = ParamSpace::centered(1, 2.0).unwrap();
        let mut state = OcoState::new(vec![0.0], 10.0);
        assert_eq!(state.current, vec![0.0]);
        let mut trace = vec![];
        for _ in 0..15 {
            trace.push(dp_ftrl_next(&mut state, &[1.0], &[0.0], &space, 0.1)[0]);
        }
        for (k, w) in trace.iter().enumerate() {
            let expected = (-0.1 * (k + 1) as f64).max(-1.0);
            assert!((w - expected).abs() < 1e-12);
        }
        assert_eq!(*trace.last().unwrap(), -1.0);
        let space2 = ParamSpace::centered(2, 2.0).unwrap();
        let mut s2 = OcoState::new(vec![0.0, 0.0], 10.0);
        assert_eq!(dp_ftrl_next(&mut s2, &[1.0, 0.0], &[0.0, 0.0], &space2, 0.1).0, vec![-0.1, 0.0]);
    }

    #[test]
    fn ftrl_clips_long_gradients() {
        let space = ParamSpace::centered(2, 2.0).unwrap();
        let mut s = OcoState::new(vec![0.0, 0.0], 1.0);
        dp_ftrl_next(&mut s, &[3.0, 4.0], &[0.0, 0.0], &space, 0.1);
        assert_eq!(s.clip_events, 1);
        assert!((norm(&s.gradient_sum) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn exp3_examples() {
        let l = GroupWeights::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(exp3_update(&l, 0, 0.0, 0.5).unwrap(), l);
        let u = exp3_update(&l, 0, 2f64.ln(), 0.5).unwrap();
        assert!((u[0] - 1.0 / 3.0).abs() < 1e-12 && (u[1] - 2.0 / 3.0).abs() < 1e-12);
        let l3 = GroupWeights::new(vec![0.2, 0.3, 0.5]).unwrap();
        assert!(exp3_update(&l3, 1, 0.7, 0.1).unwrap()[1] < 0.3);
        let degenerate = GroupWeights::new(vec![1.0, 0.0]).unwrap();
        assert!(matches!(exp3_update(&degenerate, 1, 1.0, 0.1), Err(Error::DegenerateWeight { index: 1 })));
    }

    #[test]
    fn exp3_floor_counts_underflow() {
        let l = GroupWeights::new(vec![0.5, 0.5]).unwrap();
        let (u, floored) = exp3_update_counted(&l, 0, 1e6, 1.0).unwrap();
        assert_eq!(floored, 1);
        assert!(u[0] > 0.0);
    }

    #[test]
    fn game_counts_draws_and_stays_feasible() {
        let inst = build_two_point_instance();
        let privacy = PrivacyBudget::new(1.0, 1e-5).unwrap();
        let cfg = GameConfig::new(200, 2, inst.loss.range_bound, privacy).unwrap();
        let mut oracles = SampleOracleSet::new(inst.groups.clone(), 1000).unwrap();
        let rng = RandomStream::new(4);
        let mut oco = DpFtrl::new(&inst.space, inst.loss.lipschitz, cfg.rounds, privacy, None, rng.child(9)).unwrap();
        let run = run_game(&mut oracles, &cfg, &mut oco, &inst.loss, &inst.space, &rng).unwrap();
        assert_eq!(run.draws_used, 2 * 199);
        assert!(inst.space.contains(&run.w_bar));
        assert_eq!(run.counters.underflow_events, 0);
    }

    #[test]
    fn single_group_game_reduces_to_oco() {
        let space = ParamSpace::centered(1, 2.0).unwrap();
        let loss = make_loss(LossKind::Affine, 1, &space, 1.0).unwrap();
        let dist = GroupDistribution::point_mass(DataPoint::new(vec![1.0], 1.0));
        let privacy = PrivacyBudget::non_private(1e-5);
        let cfg = GameConfig::new(4096, 1, loss.range_bound, privacy).unwrap();
        assert_eq!(cfg.eta_exp3, 0.0);
        let mut oracles = SampleOracleSet::new(vec![dist.clone()], 8192).unwrap();
        let rng = RandomStream::new(0);
        let mut oco = DpFtrl::new(&space, 1.0, cfg.rounds, privacy, None, rng.child(9)).unwrap();
        let run = run_game(&mut oracles, &cfg, &mut oco, &loss, &space, &rng).unwrap();
        assert_eq!(run.lambda_bar.as_slice(), &[1.0]);
        let risk = loss.value(&run.w_bar, &DataPoint::new(vec![1.0], 1.0));
        assert!(risk - 0.0 <= 0.1);
    }

    #[test]
    fn hedge_regret_small_example() {
        let losses: Vec<Vec<f64>> = (0..100).map(|t| if t % 2 == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] }).collect();
        let r = hedge_regret(&losses, 0.1).unwrap();
        assert!(r >= 0.0 && r <= 2.0f64.ln() / 0.1 + 0.1 * 100.0 / 8.0 + 1e-9);
    }
}
