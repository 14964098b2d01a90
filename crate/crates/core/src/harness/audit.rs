//! Invariant audits with measured margins.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mechanisms::{gaussian_noise, laplace_noise, phased_noise_sigma, PrivacyBudget, TreeNoise};
use crate::numkit::RandomStream;
use crate::online::{dp_ftrl_next, exp3_regret, hedge_regret, DpFtrl, DpOco, OcoState};
use crate::problem::{build_hard_instance, AffineGenerator, GroupRisks, HardInstance, HardMode, ParamSpace};
use crate::saddle::{stability_probe, StabilitySetup};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AuditKind {
    Stability,
    Mechanisms,
    Regret,
    Reduction,
}

impl AuditKind {
    pub fn name(self) -> &'static str {
        match self {
            AuditKind::Stability => "stability",
            AuditKind::Mechanisms => "mechanisms",
            AuditKind::Regret => "regret",
            AuditKind::Reduction => "reduction",
        }
    }

    /// Trials used when none are given.
    pub fn default_trials(self) -> usize {
        match self {
            AuditKind::Stability => 100,
            AuditKind::Mechanisms => 1_000_000,
            AuditKind::Regret => 200,
            AuditKind::Reduction => 10,
        }
    }
}

impl FromStr for AuditKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stability" => Ok(AuditKind::Stability),
            "mechanisms" => Ok(AuditKind::Mechanisms),
            "regret" => Ok(AuditKind::Regret),
            "reduction" => Ok(AuditKind::Reduction),
            other => Err(Error::Config(format!("unknown audit kind {other:?}"))),
        }
    }
}

/// One checked inequality `measured <= limit` (or an equality, with limit 0
/// on the absolute difference).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditCheck {
    pub name: String,
    pub measured: f64,
    pub limit: f64,
    pub passed: bool,
}

impl AuditCheck {
    pub fn at_most(name: impl Into<String>, measured: f64, limit: f64) -> Self {
        Self { name: name.into(), measured, limit, passed: measured <= limit }
    }

    /// `limit - measured`; negative on failure.
    pub fn margin(&self) -> f64 {
        self.limit - self.measured
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub kind: AuditKind,
    pub trials: usize,
    pub checks: Vec<AuditCheck>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// The smallest margin over all checks.
    pub fn worst_margin(&self) -> f64 {
        self.checks.iter().map(AuditCheck::margin).fold(f64::INFINITY, f64::min)
    }
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "audit {} ({} trials)", self.kind.name(), self.trials)?;
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            writeln!(f, "{tag} {}: measured {:.6e} limit {:.6e} margin {:.3e}", c.name, c.measured, c.limit, c.margin())?;
        }
        write!(f, "{} worst margin {:.3e}", if self.passed() { "PASS" } else { "FAIL" }, self.worst_margin())
    }
}

/// Runs the audit of `kind`. `trials` defaults to
/// [`AuditKind::default_trials`]. Failed checks are reported, not returned
/// as errors.
pub fn audit(kind: AuditKind, trials: Option<usize>, seed: u64) -> Result<AuditReport> {
    let trials = trials.unwrap_or(kind.default_trials());
    if trials == 0 {
        return Err(Error::Config("trials must be positive".into()));
    }
    let rng = RandomStream::new(seed);
    let checks = match kind {
        AuditKind::Stability => stability_checks(trials, &rng)?,
        AuditKind::Mechanisms => mechanism_checks(trials, &rng)?,
        AuditKind::Regret => regret_checks(trials, &rng)?,
        AuditKind::Reduction => reduction_checks(trials, &rng)?,
    };
    Ok(AuditReport { kind, trials, checks })
}

fn stability_checks(trials: usize, rng: &RandomStream) -> Result<Vec<AuditCheck>> {
    let report = stability_probe(&StabilitySetup::default(), trials, rng)?;
    Ok(vec![
        AuditCheck::at_most("max distance / stability bound", report.max_distance / report.bound, 1.0),
        AuditCheck::at_most("bound violations", report.violations as f64, 0.0),
    ])
}

fn sample_variance(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

fn relative_error(measured: f64, target: f64) -> f64 {
    (measured / target - 1.0).abs()
}

/// Empirical variance of `Lap(1)` over `draws` samples.
pub fn laplace_variance(draws: usize, rng: &mut RandomStream) -> Result<f64> {
    let xs = (0..draws).map(|_| laplace_noise(1.0, rng)).collect::<Result<Vec<_>>>()?;
    Ok(sample_variance(&xs))
}

fn mechanism_checks(draws: usize, rng: &RandomStream) -> Result<Vec<AuditCheck>> {
    if draws < 2 {
        return Err(Error::Config("the mechanisms audit needs at least 2 draws".into()));
    }
    let mut checks = Vec::new();
    let lap = laplace_variance(draws, &mut rng.child(0))?;
    checks.push(AuditCheck::at_most("Laplace(1) variance relative error", relative_error(lap, 2.0), 0.05));
    let gauss = sample_variance(&gaussian_noise(2.0, draws, &mut rng.child(1))?);
    checks.push(AuditCheck::at_most("Gaussian(2) variance relative error", relative_error(gauss, 4.0), 0.05));
    let sigma_node = 1.5;
    let mut tree = TreeNoise::new(8, sigma_node, draws, rng.child(2))?;
    for t in [1usize, 3, 7] {
        let var = sample_variance(&tree.prefix(t)?);
        let target = t.count_ones() as f64 * sigma_node * sigma_node;
        checks.push(AuditCheck::at_most(format!("tree prefix t={t} variance relative error"), relative_error(var, target), 0.05));
    }
    let sigma = phased_noise_sigma(1.0, 16, 0.1, 0.05, PrivacyBudget::new(1.0, 1e-5)?)?;
    checks.push(AuditCheck::at_most("phased noise sigma |value - 4.0716|", (sigma - 4.0716).abs(), 1e-3));
    let mut zero = rng.child(3);
    let mut largest = 0.0f64;
    for _ in 0..1000 {
        largest = largest.max(laplace_noise(0.0, &mut zero)?.abs());
    }
    largest = gaussian_noise(0.0, 1000, &mut zero)?.iter().fold(largest, |m, v| m.max(v.abs()));
    let mut zero_tree = TreeNoise::new(8, 0.0, 16, rng.child(4))?;
    for t in 0..=8 {
        largest = zero_tree.prefix(t)?.iter().fold(largest, |m, v| m.max(v.abs()));
    }
    checks.push(AuditCheck::at_most("largest zero-scale noise magnitude", largest, 0.0));
    Ok(checks)
}

/// Loss sequences in `[0, u]` used by the regret audit: i.i.d. uniform, a
/// fixed best arm, a best arm that switches halfway, and a cyclic good arm.
pub fn regret_sequences(rounds: usize, p: usize, u: f64, rng: &mut RandomStream) -> Vec<(&'static str, Vec<Vec<f64>>)> {
    let iid = (0..rounds).map(|_| (0..p).map(|_| u * rng.uniform()).collect()).collect();
    let fixed = (0..rounds).map(|_| (0..p).map(|i| if i == 0 { 0.0 } else { u }).collect()).collect();
    let switch = (0..rounds)
        .map(|t| {
            let good = if t < rounds / 2 { 0 } else { p - 1 };
            (0..p).map(|i| if i == good { 0.0 } else { u }).collect()
        })
        .collect();
    let cyclic = (0..rounds).map(|t| (0..p).map(|i| if i == t % p { 0.0 } else { u }).collect()).collect();
    vec![("iid", iid), ("fixed-best", fixed), ("switch", switch), ("cyclic", cyclic)]
}

/// `2 U sqrt(T ln p)`.
pub fn regret_limit(rounds: usize, p: usize, u: f64) -> f64 {
    2.0 * u * (rounds as f64 * (p as f64).ln()).sqrt()
}

/// Largest Hedge and EXP3 regret over [`regret_sequences`], divided by
/// [`regret_limit`], for one `(T, p)`. Hedge uses `η = sqrt(ln p / (T U²))`
/// and EXP3 `η = sqrt(ln p / (p T U²))`.
pub fn regret_ratios(rounds: usize, p: usize, replays: usize, rng: &RandomStream) -> Result<(f64, f64)> {
    let u = 1.0;
    let limit = regret_limit(rounds, p, u);
    let (t, pf) = (rounds as f64, p as f64);
    let eta_hedge = (pf.ln() / (t * u * u)).sqrt();
    let eta_exp3 = (pf.ln() / (pf * t * u * u)).sqrt();
    let (mut hedge, mut exp3) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (k, (_, seq)) in regret_sequences(rounds, p, u, &mut rng.child(0)).into_iter().enumerate() {
        hedge = hedge.max(hedge_regret(&seq, eta_hedge)? / limit);
        exp3 = exp3.max(exp3_regret(&seq, eta_exp3, replays, &mut rng.child(1 + k as u64))? / limit);
    }
    Ok((hedge, exp3))
}

/// Largest absolute difference between DP-FTRL with zero noise and lazy
/// projected gradient descent on a random affine stream.
pub fn ftrl_zero_noise_difference(rounds: usize, rng: &RandomStream) -> Result<f64> {
    let mut data_rng = rng.child(0);
    let gen = AffineGenerator::new(3, 2, 1.0, 2.0, &mut data_rng)?;
    let space: ParamSpace = gen.space.clone();
    let eta = 0.05;
    let mut ftrl = DpFtrl::new(&space, 1.0, rounds, PrivacyBudget::non_private(1e-5), Some(eta), rng.child(1))?;
    let mut lazy = OcoState::new(space.center.clone(), f64::INFINITY);
    let zeros = vec![0.0; space.dim()];
    let mut worst = 0.0f64;
    for _ in 0..rounds {
        let z = gen.sample_any(&mut data_rng);
        let g = gen.loss.gradient(&lazy.current, &z);
        let a = ftrl.next(&gen.loss, &z)?;
        let b = dp_ftrl_next(&mut lazy, &g, &zeros, &space, eta);
        for (x, y) in a.iter().zip(b.iter()) {
            worst = worst.max(if x.to_bits() == y.to_bits() { 0.0 } else { (x - y).abs().max(f64::MIN_POSITIVE) });
        }
    }
    Ok(worst)
}

fn regret_checks(replays: usize, rng: &RandomStream) -> Result<Vec<AuditCheck>> {
    let mut checks = Vec::new();
    for (k, (rounds, p)) in [(100, 2), (100, 8), (1000, 2), (1000, 8)].into_iter().enumerate() {
        let (hedge, exp3) = regret_ratios(rounds, p, replays, &rng.child(k as u64))?;
        checks.push(AuditCheck::at_most(format!("Hedge regret / 2U sqrt(T ln p), T={rounds} p={p}"), hedge, 1.0));
        checks.push(AuditCheck::at_most(format!("EXP3 regret / 2U sqrt(T ln p), T={rounds} p={p}"), exp3, 1.0));
    }
    checks.push(AuditCheck::at_most(
        "DP-FTRL without noise vs lazy projected descent",
        ftrl_zero_noise_difference(1000, &rng.child(99))?,
        0.0,
    ));
    Ok(checks)
}

/// For one random hard empirical instance with `d = 1`: the min-max value
/// and the group-0 minimum over a `points`-point grid, and the number of
/// grid points whose worst group is not group 0.
pub fn reduction_identity(points: usize, rng: &mut RandomStream) -> Result<(f64, f64, usize)> {
    let gen = AffineGenerator::new(1, 2, 1.0, 2.0, rng)?;
    let base = gen.instance(4, rng)?;
    let HardInstance::Empirical { space, loss, collection } = build_hard_instance(HardMode::Empirical, &base, 4, 16, rng)?
    else {
        return Err(Error::ContractViolation("expected an empirical hard instance".into()));
    };
    let risks = GroupRisks::from_collection(&collection, &loss)?;
    let (c, r) = (space.center[0], space.radius());
    let mut minmax = f64::INFINITY;
    let mut single = f64::INFINITY;
    let mut off_group = 0;
    for i in 0..points {
        let w = [c - r + 2.0 * r * i as f64 / (points - 1) as f64];
        let values = risks.risks(&w);
        let worst = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if values[0] < worst {
            off_group += 1;
        }
        minmax = minmax.min(worst);
        single = single.min(values[0]);
    }
    Ok((minmax, single, off_group))
}

fn reduction_checks(trials: usize, rng: &RandomStream) -> Result<Vec<AuditCheck>> {
    let mut diff = 0.0f64;
    let mut off = 0;
    for k in 0..trials {
        let (minmax, single, off_group) = reduction_identity(101, &mut rng.child(k as u64))?;
        diff = diff.max((minmax - single).abs());
        off += off_group;
    }
    Ok(vec![
        AuditCheck::at_most("|min-max value - group-0 minimum|", diff, 0.0),
        AuditCheck::at_most("grid points whose worst group is not group 0", off as f64, 0.0),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduction_audit_is_exact() {
        let r = audit(AuditKind::Reduction, Some(3), 0).unwrap();
        assert!(r.passed(), "{r}");
        assert_eq!(r.worst_margin(), 0.0);
    }

    #[test]
    fn mechanisms_audit_passes() {
        let r = audit(AuditKind::Mechanisms, Some(200_000), 1).unwrap();
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn ftrl_identity_holds() {
        assert_eq!(ftrl_zero_noise_difference(200, &RandomStream::new(4)).unwrap(), 0.0);
    }

    #[test]
    fn kinds_parse() {
        for k in ["stability", "mechanisms", "regret", "reduction"] {
            assert_eq!(k.parse::<AuditKind>().unwrap().name(), k);
        }
        assert!("other".parse::<AuditKind>().is_err());
    }
}
