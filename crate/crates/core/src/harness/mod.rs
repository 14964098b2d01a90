//! Experiment orchestration: excess-risk estimation, seeded suites and
//! sweeps, audits, and CSV output.

pub mod audit;
pub mod config;
pub mod csv;

use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

pub use self::audit::{audit, AuditCheck, AuditKind, AuditReport};
pub use self::config::{
    AlgoParams, Algorithm, BaselineMode, Epsilon, EvalConfig, EvalMode, ExperimentConfig, InstanceSpec,
};
pub use self::csv::{suites_to_csv, write_csv, write_outputs, CSV_COLUMNS, CSV_SCHEMA_VERSION};

use crate::empirical::{ags_default_params, ags_params, mgr_default_params, mgr_params, run_ags, run_mgr, ProblemScales};
use crate::error::{Error, Result};
use crate::mechanisms::{tree_sigma_node, PrivacyBudget};
use crate::numkit::{mean_and_stderr, RandomStream};
use crate::online::{default_ftrl_eta, run_game, DpFtrl, GameConfig};
use crate::phased_erm::{default_eta, make_schedule, run_phased_erm, PhasedOptions};
use crate::problem::{DatasetCollection, GroupRisks, Instance, SampleOracleSet};
use crate::saddle::{baseline_regularization, nonprivate_baseline, solve_to_alpha, RegularizedObjective, SaddleSolver};

/// Points in the grid baseline.
pub const GRID_POINTS: usize = 10_000;

/// Worst-group risk evaluator: exact when the instance allows it, otherwise
/// the empirical risk of a fixed evaluation sample.
#[derive(Debug, Clone)]
pub struct RiskEvaluator {
    risks: GroupRisks,
    exact: bool,
}

impl RiskEvaluator {
    /// Population risks of `instance`; falls back to `n_eval` draws per group.
    pub fn population(instance: &Instance, n_eval: usize, rng: &RandomStream) -> Result<Self> {
        match GroupRisks::from_distributions(&instance.groups, &instance.loss) {
            Ok(risks) => Ok(Self { risks, exact: true }),
            Err(Error::UnsupportedMode(_)) => {
                let mut oracles = SampleOracleSet::new(instance.groups.clone(), n_eval * instance.p)?;
                let sample = oracles.draw_collection(n_eval, &mut rng.clone())?;
                Ok(Self { risks: GroupRisks::from_collection(&sample, &instance.loss)?, exact: false })
            }
            Err(e) => Err(e),
        }
    }

    pub fn empirical(collection: &DatasetCollection, instance: &Instance) -> Result<Self> {
        Ok(Self { risks: GroupRisks::from_collection(collection, &instance.loss)?, exact: true })
    }

    pub fn is_exact(&self) -> bool {
        self.exact
    }

    pub fn worst_group(&self, w: &[f64]) -> f64 {
        self.risks.risks(w).into_iter().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Grid over `W` with about `points` entries: evenly spaced on the segment
/// for `d = 1`, a square lattice clipped to the disc for `d = 2`. Returns
/// the points and the covering radius.
pub fn grid_points(instance: &Instance, points: usize) -> Result<(Vec<Vec<f64>>, f64)> {
    let space = &instance.space;
    let (c, r) = (&space.center, space.radius());
    match instance.d {
        1 => {
            let h = 2.0 * r / (points - 1) as f64;
            let grid = (0..points).map(|i| vec![c[0] - r + h * i as f64]).collect();
            Ok((grid, h / 2.0))
        }
        2 => {
            let side = (points as f64).sqrt().round() as usize;
            let h = 2.0 * r / (side - 1) as f64;
            let mut grid = Vec::with_capacity(points);
            for i in 0..side {
                for j in 0..side {
                    let w = vec![c[0] - r + h * i as f64, c[1] - r + h * j as f64];
                    if space.contains(&w) {
                        grid.push(w);
                    }
                }
            }
            Ok((grid, h))
        }
        d => Err(Error::UnsupportedMode(format!("grid baseline needs d <= 2, got d = {d}"))),
    }
}

/// Risk of an output point and its excess over a baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExcessRisk {
    pub risk_raw: f64,
    pub risk_projected: f64,
    pub baseline: f64,
    /// `risk_projected - baseline`.
    pub excess: f64,
    /// How far below zero `excess` may fall because the baseline is itself
    /// approximate.
    pub tolerance: f64,
}

/// Inputs that only some baselines need.
#[derive(Debug, Clone, Copy)]
pub struct BaselineContext<'a> {
    /// Sample budget of the run; the non-private reference uses four times it.
    pub budget_k: usize,
    /// The datasets of an offline run, for empirical evaluation.
    pub data: Option<&'a DatasetCollection>,
    pub n_eval: usize,
}

/// `R(Proj_W(w_out))` and `R(w_out)` against the chosen baseline.
pub fn estimate_excess_risk(
    w_out: &[f64],
    instance: &Instance,
    mode: EvalMode,
    baseline: BaselineMode,
    ctx: BaselineContext<'_>,
    rng: &RandomStream,
) -> Result<ExcessRisk> {
    let evaluator = match mode {
        EvalMode::Population => RiskEvaluator::population(instance, ctx.n_eval, &rng.child(0))?,
        EvalMode::Empirical => {
            let data = ctx
                .data
                .ok_or_else(|| Error::UnsupportedMode("empirical evaluation needs the run's datasets".into()))?;
            RiskEvaluator::empirical(data, instance)?
        }
    };
    let (base_value, tolerance) = baseline_value(instance, &evaluator, mode, baseline, ctx, &rng.child(1))?;
    let risk_raw = evaluator.worst_group(w_out);
    let risk_projected = evaluator.worst_group(&instance.space.project(w_out));
    Ok(ExcessRisk { risk_raw, risk_projected, baseline: base_value, excess: risk_projected - base_value, tolerance })
}

fn baseline_value(
    instance: &Instance,
    evaluator: &RiskEvaluator,
    mode: EvalMode,
    baseline: BaselineMode,
    ctx: BaselineContext<'_>,
    rng: &RandomStream,
) -> Result<(f64, f64)> {
    let loss = &instance.loss;
    let space = &instance.space;
    match baseline {
        BaselineMode::Analytic => {
            let optimum = instance
                .optimum
                .as_ref()
                .ok_or_else(|| Error::UnsupportedMode(format!("instance {} has no analytic optimum", instance.name)))?;
            if mode == EvalMode::Empirical && !instance.is_deterministic() {
                return Err(Error::UnsupportedMode(
                    "analytic baseline applies to empirical risk only on point-mass instances".into(),
                ));
            }
            Ok((optimum.value, 1e-12 * loss.range_bound.max(1.0)))
        }
        BaselineMode::Grid => {
            let (grid, radius) = grid_points(instance, GRID_POINTS)?;
            let best = grid.iter().map(|w| evaluator.worst_group(w)).fold(f64::INFINITY, f64::min);
            Ok((best, loss.lipschitz * radius))
        }
        BaselineMode::NonprivateBaseline => {
            let w = match mode {
                EvalMode::Population => {
                    let budget = 4 * ctx.budget_k;
                    let mut oracles = SampleOracleSet::new(instance.groups.clone(), budget)?;
                    nonprivate_baseline(&mut oracles, budget, loss, space, &mut rng.clone())?
                }
                EvalMode::Empirical => {
                    let data = ctx.data.ok_or_else(|| {
                        Error::UnsupportedMode("empirical evaluation needs the run's datasets".into())
                    })?;
                    let (mu_w, mu_lambda) = baseline_regularization(data.size() * data.groups(), data.groups(), loss, space)?;
                    let obj = RegularizedObjective::new(data, loss, space, mu_w, mu_lambda, space.center.clone())?;
                    let alpha = 1e-8 * loss.scale() * space.diameter;
                    solve_to_alpha(&obj, alpha, &space.center, SaddleSolver::default())?.w_bar
                }
            };
            // An upper bound on the optimum, so the excess can dip below zero.
            Ok((evaluator.worst_group(&w), f64::INFINITY))
        }
    }
}

/// Events counted during one run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct TrialCounters {
    pub clip_events: usize,
    pub underflow_events: usize,
    pub laplace_exceed: usize,
    /// The default round count was capped.
    pub rounds_capped: bool,
}

/// Measurements of a successful trial.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialMetrics {
    pub risk: ExcessRisk,
    pub draws_used: usize,
    pub counters: TrialCounters,
    pub w_out: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialResult {
    pub seed: u64,
    /// `None` when the run failed; see `status`.
    pub metrics: Option<TrialMetrics>,
    pub wall_ms: Option<f64>,
    pub status: String,
}

struct AlgoOutput {
    w_out: Vec<f64>,
    draws_used: usize,
    data: Option<DatasetCollection>,
    counters: TrialCounters,
}

fn run_algorithm(config: &ExperimentConfig, instance: &Instance, rng: &RandomStream) -> Result<AlgoOutput> {
    let privacy: PrivacyBudget = config.privacy()?;
    let (loss, space, k, p) = (&instance.loss, &instance.space, config.k, instance.p);
    let params = &config.params;
    let mut oracles = SampleOracleSet::new(instance.groups.clone(), k)?;
    let mut counters = TrialCounters::default();
    let (w_out, data) = match config.algorithm {
        Algorithm::PhasedErm => {
            let eta = default_eta(space.diameter, loss.scale(), k as f64, p as f64, privacy, instance.d)
                * params.eta_multiplier;
            let schedule = make_schedule(k, p, eta, loss, privacy)?;
            let options = PhasedOptions { project_anchors: params.project_anchors, solver: params.solver.unwrap_or_default() };
            (run_phased_erm(&mut oracles, &schedule, loss, space, &options, rng)?.output.into_inner(), None)
        }
        Algorithm::OcoGame => {
            let rounds = params.rounds.unwrap_or(k / 2);
            let game = GameConfig::new(rounds, p, loss.range_bound, privacy)?;
            let sigma_node = tree_sigma_node(loss.lipschitz, rounds, privacy);
            let eta = default_ftrl_eta(space, loss.lipschitz, rounds, sigma_node) * params.eta_multiplier;
            let mut ftrl = DpFtrl::new(space, loss.lipschitz, rounds, privacy, Some(eta), rng.child(4))?;
            let run = run_game(&mut oracles, &game, &mut ftrl, loss, space, rng)?;
            counters.clip_events = run.counters.clip_events;
            counters.underflow_events = run.counters.underflow_events;
            counters.laplace_exceed = run.counters.laplace_exceed;
            (run.w_bar.into_inner(), None)
        }
        Algorithm::Mgr | Algorithm::Ags => {
            let n = k / p;
            if n == 0 {
                return Err(Error::InstanceTooSmall(format!("K = {k} leaves no data for {p} groups")));
            }
            let collection = oracles.draw_collection(n, &mut rng.child(4))?;
            let scales = ProblemScales::new(k, loss, space, p);
            let w = if config.algorithm == Algorithm::Mgr {
                let mut cfg = match params.rounds {
                    Some(t) => mgr_params(&scales, t, privacy)?,
                    None => mgr_default_params(&scales, privacy)?,
                };
                cfg.eta_w *= params.eta_multiplier;
                cfg.batch_size = params.batch_size.unwrap_or(cfg.batch_size);
                counters.rounds_capped = cfg.capped;
                let run = run_mgr(&collection, &cfg, loss, space, &rng.child(5))?;
                counters.underflow_events = run.underflow_events;
                run.w_bar
            } else {
                let mut cfg = match params.rounds {
                    Some(t) => ags_params(&scales, t, privacy)?,
                    None => ags_default_params(&scales, privacy)?,
                };
                cfg.eta *= params.eta_multiplier;
                cfg.batch_size = params.batch_size.unwrap_or(cfg.batch_size);
                counters.rounds_capped = cfg.capped;
                run_ags(&collection, &cfg, loss, space, &rng.child(5))?.w_bar
            };
            (w.into_inner(), Some(collection))
        }
        Algorithm::NonprivateBaseline => {
            (nonprivate_baseline(&mut oracles, k, loss, space, &mut rng.child(4))?.into_inner(), None)
        }
    };
    let draws_used = oracles.draws_used();
    if draws_used > k {
        return Err(Error::ContractViolation(format!("run used {draws_used} draws with K = {k}")));
    }
    Ok(AlgoOutput { w_out, draws_used, data, counters })
}

/// One seeded run of a resolved configuration. Errors end up in `status`.
pub fn run_trial(config: &ExperimentConfig, instance: &Instance, seed: u64) -> TrialResult {
    let start = Instant::now();
    let rng = RandomStream::new(seed);
    let outcome = (|| {
        let mode = config.evaluation.mode.ok_or_else(|| Error::Config("configuration is not resolved".into()))?;
        let baseline =
            config.evaluation.baseline.ok_or_else(|| Error::Config("configuration is not resolved".into()))?;
        let out = run_algorithm(config, instance, &rng.child(0))?;
        let ctx = BaselineContext { budget_k: config.k, data: out.data.as_ref(), n_eval: config.evaluation.n_eval };
        let risk = estimate_excess_risk(&out.w_out, instance, mode, baseline, ctx, &rng.child(1))?;
        Ok::<_, Error>(TrialMetrics { risk, draws_used: out.draws_used, counters: out.counters, w_out: out.w_out })
    })();
    let wall_ms = config.record_wall_time.then(|| start.elapsed().as_secs_f64() * 1e3);
    match outcome {
        Ok(metrics) => TrialResult { seed, metrics: Some(metrics), wall_ms, status: "ok".into() },
        Err(e) => TrialResult { seed, metrics: None, wall_ms, status: format!("error: {e}") },
    }
}

/// Means over the successful trials of a suite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub n_ok: usize,
    pub n_err: usize,
    pub mean_risk_raw: f64,
    pub mean_risk_projected: f64,
    pub mean_baseline: f64,
    pub mean_excess: f64,
    pub se_excess: f64,
    pub mean_draws: f64,
    pub mean_wall_ms: Option<f64>,
}

impl Summary {
    pub fn of(trials: &[TrialResult]) -> Self {
        let ok: Vec<&TrialMetrics> = trials.iter().filter_map(|t| t.metrics.as_ref()).collect();
        let mean = |f: &dyn Fn(&TrialMetrics) -> f64| {
            if ok.is_empty() {
                f64::NAN
            } else {
                ok.iter().map(|m| f(m)).sum::<f64>() / ok.len() as f64
            }
        };
        let excess: Vec<f64> = ok.iter().map(|m| m.risk.excess).collect();
        let (mean_excess, se_excess) = match excess.len() {
            0 => (f64::NAN, f64::NAN),
            1 => (excess[0], 0.0),
            _ => mean_and_stderr(&excess),
        };
        let walls: Vec<f64> = trials.iter().filter_map(|t| t.wall_ms).collect();
        Self {
            n_ok: ok.len(),
            n_err: trials.len() - ok.len(),
            mean_risk_raw: mean(&|m| m.risk.risk_raw),
            mean_risk_projected: mean(&|m| m.risk.risk_projected),
            mean_baseline: mean(&|m| m.risk.baseline),
            mean_excess,
            se_excess,
            mean_draws: mean(&|m| m.draws_used as f64),
            mean_wall_ms: (!walls.is_empty()).then(|| walls.iter().sum::<f64>() / walls.len() as f64),
        }
    }
}

/// All trials of one parameter point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteResult {
    /// The resolved configuration.
    pub config: ExperimentConfig,
    pub instance_name: String,
    pub d: usize,
    pub p: usize,
    pub trials: Vec<TrialResult>,
    pub summary: Summary,
}

/// Runs every seed of `config` (in parallel, reported in seed-list order).
/// Relative instance paths resolve against `base_dir`.
pub fn run_suite(config: &ExperimentConfig, base_dir: &Path) -> Result<SuiteResult> {
    let (resolved, instance) = config.resolve(base_dir)?;
    let trials: Vec<TrialResult> = resolved.seeds.par_iter().map(|&s| run_trial(&resolved, &instance, s)).collect();
    let summary = Summary::of(&trials);
    Ok(SuiteResult { instance_name: instance.name.clone(), d: instance.d, p: instance.p, config: resolved, trials, summary })
}

/// Parameter varied by [`sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    K,
    Epsilon,
    Delta,
    Rounds,
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "K" | "k" => Ok(SweepParam::K),
            "eps" | "epsilon" => Ok(SweepParam::Epsilon),
            "delta" => Ok(SweepParam::Delta),
            "rounds" | "T" => Ok(SweepParam::Rounds),
            other => Err(Error::Config(format!("cannot sweep over {other:?}; use K, eps, delta or rounds"))),
        }
    }
}

impl SweepParam {
    pub fn apply(self, config: &mut ExperimentConfig, value: &str) -> Result<()> {
        let bad = || Error::Config(format!("bad sweep value {value:?}"));
        match self {
            SweepParam::K => config.k = value.trim().parse().map_err(|_| bad())?,
            SweepParam::Epsilon => config.epsilon = Epsilon::parse(value)?,
            SweepParam::Delta => config.delta = value.trim().parse().map_err(|_| bad())?,
            SweepParam::Rounds => config.params.rounds = Some(value.trim().parse().map_err(|_| bad())?),
        }
        Ok(())
    }
}

/// One suite per value, in the given order.
pub fn sweep(config: &ExperimentConfig, base_dir: &Path, param: SweepParam, values: &[String]) -> Result<Vec<SuiteResult>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    values
        .iter()
        .map(|v| {
            let mut c = config.clone();
            param.apply(&mut c, v)?;
            run_suite(&c, base_dir)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::build_two_point_instance;

    fn ctx() -> BaselineContext<'static> {
        BaselineContext { budget_k: 64, data: None, n_eval: 100 }
    }

    #[test]
    fn excess_risk_examples() {
        let inst = build_two_point_instance();
        let rng = RandomStream::new(0);
        for (w, expected) in [(0.0, 0.0), (0.5, 0.5)] {
            let e = estimate_excess_risk(&[w], &inst, EvalMode::Population, BaselineMode::Analytic, ctx(), &rng).unwrap();
            assert_eq!(e.excess, expected);
        }
        let raw = estimate_excess_risk(&[1.5], &inst, EvalMode::Population, BaselineMode::Analytic, ctx(), &rng).unwrap();
        assert_eq!((raw.risk_raw, raw.risk_projected, raw.excess), (2.5, 2.0, 1.0));
        let grid = estimate_excess_risk(&[0.0], &inst, EvalMode::Population, BaselineMode::Grid, ctx(), &rng).unwrap();
        assert!(grid.excess.abs() <= grid.tolerance);
    }

    #[test]
    fn missing_capabilities_are_unsupported() {
        let mut inst = build_two_point_instance();
        inst.optimum = None;
        let rng = RandomStream::new(0);
        let e = estimate_excess_risk(&[0.0], &inst, EvalMode::Population, BaselineMode::Analytic, ctx(), &rng);
        assert!(matches!(e, Err(Error::UnsupportedMode(_))));
        let e = estimate_excess_risk(&[0.0], &inst, EvalMode::Empirical, BaselineMode::Grid, ctx(), &rng);
        assert!(matches!(e, Err(Error::UnsupportedMode(_))));
    }

    #[test]
    fn one_seed_gives_a_summary() {
        let mut c = ExperimentConfig::new(Algorithm::OcoGame, InstanceSpec::TwoPoint {}, 256, Epsilon(1.0));
        c.seeds = vec![3];
        let suite = run_suite(&c, Path::new(".")).unwrap();
        assert_eq!(suite.trials.len(), 1);
        assert_eq!(suite.summary.n_ok, 1, "{}", suite.trials[0].status);
        assert_eq!(suite.trials[0].metrics.as_ref().unwrap().draws_used, 2 * (128 - 1));
    }

    #[test]
    fn errors_stay_in_rows() {
        let c = ExperimentConfig::new(Algorithm::PhasedErm, InstanceSpec::TwoPoint {}, 4, Epsilon(1.0));
        let suite = run_suite(&c, Path::new(".")).unwrap();
        assert!(suite.trials[0].status.starts_with("error: instance too small"));
        assert_eq!(suite.summary.n_err, 1);
    }

    #[test]
    fn sweep_parses_params() {
        assert_eq!("K".parse::<SweepParam>().unwrap(), SweepParam::K);
        assert!("p".parse::<SweepParam>().is_err());
        let mut c = ExperimentConfig::new(Algorithm::Mgr, InstanceSpec::TwoPoint {}, 256, Epsilon(1.0));
        SweepParam::Epsilon.apply(&mut c, "inf").unwrap();
        assert!(c.epsilon.0.is_infinite());
    }
}
