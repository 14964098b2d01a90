//! Losses, group distributions, sample oracles, dataset collections and
//! synthetic instances.

mod data;
mod instance;
mod loss;

pub use data::{
    make_neighbor, random_neighbor, DatasetCollection, GroupDistribution, GroupRisks, SampleOracleSet, WeightedPoint,
};
pub use instance::{
    build_hard_instance, build_two_point_instance, constant_loss_collection, uniform_in_ball, AffineGenerator,
    HardInstance, HardMode, Instance, KnownOptimum, INSTANCE_SCHEMA,
};
pub use loss::{audit_loss, make_loss, DataPoint, LossAudit, LossKind, LossSpec, ParamSpace};

use crate::error::{invalid, Error, Result};
use crate::numkit::{argmax, mean_and_stderr, RandomStream};

/// Mean loss over `dataset`.
pub fn empirical_risk(dataset: &[DataPoint], w: &[f64], loss: &LossSpec) -> Result<f64> {
    if dataset.is_empty() {
        return invalid("empirical risk of an empty dataset");
    }
    let mut total = 0.0;
    for z in dataset {
        total += loss.evaluate(w, z)?;
    }
    Ok(total / dataset.len() as f64)
}

/// How to evaluate an expectation over a group distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RiskMode {
    Exact,
    MonteCarlo { samples: usize },
}

/// A risk value together with its Monte Carlo standard error (0 when exact).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskEstimate {
    pub value: f64,
    pub stderr: f64,
}

/// Expected loss under `dist`. `Exact` works for finite supports and for
/// the affine loss over a ball, whose expectation is the loss at the center.
pub fn population_risk(
    dist: &GroupDistribution,
    w: &[f64],
    loss: &LossSpec,
    mode: RiskMode,
    rng: &mut RandomStream,
) -> Result<RiskEstimate> {
    match mode {
        RiskMode::Exact => match dist {
            GroupDistribution::Finite { support } => {
                let mut value = 0.0;
                for s in support {
                    value += s.prob * loss.evaluate(w, &s.point)?;
                }
                Ok(RiskEstimate { value, stderr: 0.0 })
            }
            GroupDistribution::UniformBall { x_center, y, shift, .. } if loss.kind == LossKind::Affine => {
                let center = DataPoint { x: x_center.clone(), y: *y, shift: *shift };
                Ok(RiskEstimate { value: loss.evaluate(w, &center)?, stderr: 0.0 })
            }
            GroupDistribution::UniformBall { .. } => Err(Error::UnsupportedMode(
                "exact risk over a ball is only available for the affine loss".into(),
            )),
        },
        RiskMode::MonteCarlo { samples } => {
            if samples < 2 {
                return invalid("Monte Carlo evaluation needs at least 2 samples");
            }
            let mut values = Vec::with_capacity(samples);
            for _ in 0..samples {
                values.push(loss.evaluate(w, &dist.sample(rng))?);
            }
            let (value, stderr) = mean_and_stderr(&values);
            Ok(RiskEstimate { value, stderr })
        }
    }
}

/// `max_i L_{S_i}(w)` and the lowest maximizing index.
pub fn worst_group_empirical(collection: &DatasetCollection, w: &[f64], loss: &LossSpec) -> Result<(f64, usize)> {
    let risks = collection
        .datasets()
        .iter()
        .map(|s| empirical_risk(s, w, loss))
        .collect::<Result<Vec<_>>>()?;
    let i = argmax(&risks);
    Ok((risks[i], i))
}

/// `max_i L_{D_i}(w)` with exact evaluation, and the lowest maximizing index.
pub fn worst_group_population(dists: &[GroupDistribution], w: &[f64], loss: &LossSpec) -> Result<(f64, usize)> {
    if dists.is_empty() {
        return invalid("need at least one group");
    }
    let mut rng = RandomStream::new(0);
    let risks = dists
        .iter()
        .map(|d| population_risk(d, w, loss, RiskMode::Exact, &mut rng).map(|r| r.value))
        .collect::<Result<Vec<_>>>()?;
    let i = argmax(&risks);
    Ok((risks[i], i))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn affine_1d() -> LossSpec {
        let space = ParamSpace::centered(1, 2.0).unwrap();
        make_loss(LossKind::Affine, 1, &space, 1.0).unwrap()
    }

    #[test]
    fn loss_examples() {
        let space = ParamSpace::centered(2, 2.0).unwrap();
        let hinge = make_loss(LossKind::Hinge, 2, &space, 1.0).unwrap();
        assert_eq!(hinge.range_bound, 2.0);
        let z = DataPoint::new(vec![0.6, 0.8], -1.0);
        assert_eq!(hinge.evaluate(&[0.0, 0.0], &z).unwrap(), 1.0);
        let z = DataPoint::new(vec![1.0, 0.0], 1.0);
        assert_eq!(hinge.evaluate(&[2.0, 0.0], &z).unwrap(), 0.0);
        let affine = affine_1d();
        assert_eq!(affine.evaluate(&[0.5], &DataPoint::new(vec![1.0], 1.0)).unwrap(), 1.5);
        let bad = DataPoint::new(vec![1.5], 0.0);
        assert!(matches!(affine.evaluate(&[0.0], &bad), Err(Error::ContractViolation(_))));
    }

    #[test]
    fn empirical_risk_examples() {
        let loss = affine_1d();
        let s = vec![DataPoint::new(vec![1.0], 0.0), DataPoint::new(vec![-1.0], 1.0)];
        assert_eq!(empirical_risk(&s, &[0.5], &loss).unwrap(), 0.5);
        let z = DataPoint::new(vec![0.3], 0.2);
        assert_eq!(empirical_risk(std::slice::from_ref(&z), &[0.7], &loss).unwrap(), loss.value(&[0.7], &z));
        assert!(empirical_risk(&[], &[0.0], &loss).is_err());
    }

    #[test]
    fn population_risk_examples() {
        let loss = affine_1d();
        let mut rng = RandomStream::new(3);
        let dist =
            GroupDistribution::finite(vec![(DataPoint::new(vec![0.0], 0.0), 0.25), (DataPoint::new(vec![0.0], 1.0), 0.75)])
                .unwrap();
        let exact = population_risk(&dist, &[0.4], &loss, RiskMode::Exact, &mut rng).unwrap();
        assert_eq!(exact.value, 0.75);
        let mc = population_risk(&dist, &[0.4], &loss, RiskMode::MonteCarlo { samples: 20_000 }, &mut rng).unwrap();
        assert!((mc.value - exact.value).abs() <= 4.0 * mc.stderr);
        let ball = GroupDistribution::UniformBall { x_center: vec![0.0], x_radius: 0.5, y: 1.0, shift: 0.0 };
        let centered = population_risk(&ball, &[0.4], &loss, RiskMode::Exact, &mut rng).unwrap();
        assert_eq!(centered.value, loss.value(&[0.4], &DataPoint::new(vec![0.0], 1.0)));
        let hinge = make_loss(LossKind::Hinge, 1, &ParamSpace::centered(1, 2.0).unwrap(), 1.0).unwrap();
        assert!(matches!(
            population_risk(&ball, &[0.0], &hinge, RiskMode::Exact, &mut rng),
            Err(Error::UnsupportedMode(_))
        ));
    }

    #[test]
    fn enumerated_support_matches_population() {
        let loss = affine_1d();
        let a = DataPoint::new(vec![0.5], 0.5);
        let b = DataPoint::new(vec![-1.0], 1.0);
        let dist = GroupDistribution::finite(vec![(a.clone(), 0.25), (b.clone(), 0.75)]).unwrap();
        let enumerated = vec![a, b.clone(), b.clone(), b];
        let mut rng = RandomStream::new(0);
        for w in [-1.0, -0.3, 0.0, 0.8] {
            let pop = population_risk(&dist, &[w], &loss, RiskMode::Exact, &mut rng).unwrap().value;
            let emp = empirical_risk(&enumerated, &[w], &loss).unwrap();
            assert!((pop - emp).abs() < 1e-15);
        }
    }

    #[test]
    fn oracle_budget_enforced() {
        let inst = build_two_point_instance();
        let mut oracles = SampleOracleSet::new(inst.groups.clone(), 5).unwrap();
        let mut rng = RandomStream::new(1);
        oracles.draw_many(0, 3, &mut rng).unwrap();
        oracles.draw(1, &mut rng).unwrap();
        assert!(matches!(oracles.draw_many(1, 2, &mut rng), Err(Error::BudgetExhausted { .. })));
        assert_eq!(oracles.draws_used(), 4);
        oracles.draw(0, &mut rng).unwrap();
        assert!(oracles.draw(0, &mut rng).is_err());
        assert_eq!(oracles.draws_used(), 5);
    }

    #[test]
    fn neighbors_differ_in_one_entry() {
        let mut rng = RandomStream::new(4);
        let gen = AffineGenerator::new(2, 3, 1.0, 1.0, &mut rng).unwrap();
        let coll = gen.collection(10, &mut rng).unwrap();
        let same = make_neighbor(&coll, 1, 2, coll.dataset(1)[2].clone()).unwrap();
        assert_eq!(same, coll);
        for _ in 0..20 {
            let (nb, _, _) = random_neighbor(&coll, &mut rng, |r| gen.sample_any(r)).unwrap();
            assert_eq!(coll.hamming_distance(&nb), Some(1));
        }
        assert!(make_neighbor(&coll, 3, 0, coll.dataset(0)[0].clone()).is_err());
        assert!(make_neighbor(&coll, 0, 10, coll.dataset(0)[0].clone()).is_err());
    }

    #[test]
    fn group_risks_agree_with_direct_evaluation() {
        let mut rng = RandomStream::new(8);
        let gen = AffineGenerator::new(3, 4, 1.0, 1.0, &mut rng).unwrap();
        let coll = gen.collection(7, &mut rng).unwrap();
        let fast = GroupRisks::from_collection(&coll, &gen.loss).unwrap();
        let w = [0.1, -0.2, 0.3];
        for (i, r) in fast.risks(&w).iter().enumerate() {
            let direct = empirical_risk(coll.dataset(i), &w, &gen.loss).unwrap();
            assert!((r - direct).abs() < 1e-12);
        }
    }
}
