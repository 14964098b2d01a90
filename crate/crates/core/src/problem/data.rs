use serde::{Deserialize, Serialize};

use super::loss::{DataPoint, LossKind, LossSpec};
use crate::error::{invalid, Error, Result};
use crate::numkit::{categorical_from_uniform, RandomStream};

/// A support point of a finite group distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedPoint {
    #[serde(flatten)]
    pub point: DataPoint,
    pub prob: f64,
}

/// The data distribution `D_i` of one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GroupDistribution {
    /// Finite support; exact population risk is available.
    Finite { support: Vec<WeightedPoint> },
    /// `x` uniform in the ball `B(x_center, x_radius)` with fixed `y` and
    /// `shift`. Exact risks exist only for the affine loss.
    UniformBall {
        x_center: Vec<f64>,
        x_radius: f64,
        y: f64,
        #[serde(default)]
        shift: f64,
    },
}

impl GroupDistribution {
    pub fn finite(support: Vec<(DataPoint, f64)>) -> Result<Self> {
        let support: Vec<WeightedPoint> =
            support.into_iter().map(|(point, prob)| WeightedPoint { point, prob }).collect();
        let dist = GroupDistribution::Finite { support };
        dist.validate()?;
        Ok(dist)
    }

    pub fn point_mass(z: DataPoint) -> Self {
        GroupDistribution::Finite { support: vec![WeightedPoint { point: z, prob: 1.0 }] }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            GroupDistribution::Finite { support } => {
                if support.is_empty() {
                    return invalid("finite distribution needs a nonempty support");
                }
                if support.iter().any(|s| !(s.prob >= 0.0)) {
                    return invalid("negative support probability");
                }
                let total: f64 = support.iter().map(|s| s.prob).sum();
                if (total - 1.0).abs() > 1e-9 {
                    return invalid(format!("support probabilities sum to {total}"));
                }
                Ok(())
            }
            GroupDistribution::UniformBall { x_radius, .. } => {
                if !(*x_radius >= 0.0) {
                    return invalid("ball radius must be nonnegative");
                }
                Ok(())
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            GroupDistribution::Finite { support } => support[0].point.x.len(),
            GroupDistribution::UniformBall { x_center, .. } => x_center.len(),
        }
    }

    /// True when every draw returns the same point.
    pub fn is_point_mass(&self) -> bool {
        match self {
            GroupDistribution::Finite { support } => support.iter().filter(|s| s.prob > 0.0).count() == 1,
            GroupDistribution::UniformBall { x_radius, .. } => *x_radius == 0.0,
        }
    }

    /// One draw. Finite supports use one uniform; the ball uses `d` normals
    /// plus one uniform.
    pub fn sample(&self, rng: &mut RandomStream) -> DataPoint {
        match self {
            GroupDistribution::Finite { support } => {
                let u = rng.uniform();
                let mut cumulative = 0.0;
                let mut last = 0;
                for (i, s) in support.iter().enumerate() {
                    if s.prob > 0.0 {
                        last = i;
                        cumulative += s.prob;
                        if u < cumulative {
                            return s.point.clone();
                        }
                    }
                }
                support[last].point.clone()
            }
            GroupDistribution::UniformBall { x_center, x_radius, y, shift } => {
                let x = super::uniform_in_ball(x_center, *x_radius, rng);
                DataPoint { x, y: *y, shift: *shift }
            }
        }
    }

    /// Probabilities of a finite support, for categorical helpers.
    pub fn probabilities(&self) -> Option<Vec<f64>> {
        match self {
            GroupDistribution::Finite { support } => Some(support.iter().map(|s| s.prob).collect()),
            _ => None,
        }
    }

    pub fn sample_index(&self, u: f64) -> Option<usize> {
        self.probabilities().map(|p| categorical_from_uniform(&p, u))
    }
}

/// The `p` sample oracles `C_i` with a shared draw budget `K`.
#[derive(Debug, Clone)]
pub struct SampleOracleSet {
    distributions: Vec<GroupDistribution>,
    draws_used: usize,
    budget: usize,
}

impl SampleOracleSet {
    pub fn new(distributions: Vec<GroupDistribution>, budget: usize) -> Result<Self> {
        if distributions.is_empty() {
            return invalid("need at least one group distribution");
        }
        if budget == 0 {
            return invalid("sample budget must be positive");
        }
        for d in &distributions {
            d.validate()?;
        }
        Ok(Self { distributions, draws_used: 0, budget })
    }

    pub fn groups(&self) -> usize {
        self.distributions.len()
    }

    pub fn distributions(&self) -> &[GroupDistribution] {
        &self.distributions
    }

    pub fn draws_used(&self) -> usize {
        self.draws_used
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn remaining(&self) -> usize {
        self.budget - self.draws_used
    }

    fn reserve(&mut self, count: usize) -> Result<()> {
        if count > self.remaining() {
            return Err(Error::BudgetExhausted {
                requested: count,
                used: self.draws_used,
                budget: self.budget,
            });
        }
        self.draws_used += count;
        Ok(())
    }

    /// One i.i.d. draw from group `group`.
    pub fn draw(&mut self, group: usize, rng: &mut RandomStream) -> Result<DataPoint> {
        if group >= self.groups() {
            return invalid(format!("group {group} out of range"));
        }
        self.reserve(1)?;
        Ok(self.distributions[group].sample(rng))
    }

    /// `count` i.i.d. draws from group `group`; all-or-nothing on the budget.
    pub fn draw_many(&mut self, group: usize, count: usize, rng: &mut RandomStream) -> Result<Vec<DataPoint>> {
        if group >= self.groups() {
            return invalid(format!("group {group} out of range"));
        }
        self.reserve(count)?;
        Ok((0..count).map(|_| self.distributions[group].sample(rng)).collect())
    }

    /// Draws `n` points from every group.
    pub fn draw_collection(&mut self, n: usize, rng: &mut RandomStream) -> Result<DatasetCollection> {
        if n.checked_mul(self.groups()).is_none_or(|total| total > self.remaining()) {
            return Err(Error::BudgetExhausted {
                requested: n.saturating_mul(self.groups()),
                used: self.draws_used,
                budget: self.budget,
            });
        }
        let datasets = (0..self.groups())
            .map(|i| self.draw_many(i, n, rng))
            .collect::<Result<Vec<_>>>()?;
        DatasetCollection::new(datasets)
    }
}

/// `p` datasets of equal size `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetCollection {
    datasets: Vec<Vec<DataPoint>>,
}

impl DatasetCollection {
    pub fn new(datasets: Vec<Vec<DataPoint>>) -> Result<Self> {
        if datasets.is_empty() {
            return invalid("collection needs at least one dataset");
        }
        let n = datasets[0].len();
        if n == 0 {
            return invalid("datasets must be nonempty");
        }
        if datasets.iter().any(|s| s.len() != n) {
            return invalid("all datasets in a collection must have the same size");
        }
        Ok(Self { datasets })
    }

    pub fn groups(&self) -> usize {
        self.datasets.len()
    }

    /// Common dataset size `n`.
    pub fn size(&self) -> usize {
        self.datasets[0].len()
    }

    pub fn dataset(&self, group: usize) -> &[DataPoint] {
        &self.datasets[group]
    }

    pub fn datasets(&self) -> &[Vec<DataPoint>] {
        &self.datasets
    }

    pub fn check_against(&self, loss: &LossSpec) -> Result<()> {
        self.datasets.iter().flatten().try_for_each(|z| loss.check_point(z))
    }

    /// Number of positions `(j, k)` where the two collections differ.
    pub fn hamming_distance(&self, other: &DatasetCollection) -> Option<usize> {
        if self.groups() != other.groups() || self.size() != other.size() {
            return None;
        }
        Some(
            self.datasets
                .iter()
                .zip(&other.datasets)
                .map(|(a, b)| a.iter().zip(b).filter(|(x, y)| x != y).count())
                .sum(),
        )
    }
}

/// Copy of `collection` with entry `index` of dataset `group` replaced.
pub fn make_neighbor(
    collection: &DatasetCollection,
    group: usize,
    index: usize,
    replacement: DataPoint,
) -> Result<DatasetCollection> {
    if group >= collection.groups() {
        return invalid(format!("group {group} out of range (p = {})", collection.groups()));
    }
    if index >= collection.size() {
        return invalid(format!("index {index} out of range (n = {})", collection.size()));
    }
    let mut datasets = collection.datasets.clone();
    datasets[group][index] = replacement;
    Ok(DatasetCollection { datasets })
}

/// Replaces a uniformly chosen entry by `generate(rng)`; returns the
/// neighbor and the replaced position.
pub fn random_neighbor(
    collection: &DatasetCollection,
    rng: &mut RandomStream,
    mut generate: impl FnMut(&mut RandomStream) -> DataPoint,
) -> Result<(DatasetCollection, usize, usize)> {
    let group = rng.index_below(collection.groups());
    let index = rng.index_below(collection.size());
    let z = generate(rng);
    Ok((make_neighbor(collection, group, index, z)?, group, index))
}

/// Per-group risks and gradients of weighted point sets. Affine losses are
/// reduced to sufficient statistics (weighted mean feature and offset), so
/// each evaluation costs `O(p d)` regardless of dataset size.
#[derive(Debug, Clone)]
pub struct GroupRisks {
    dim: usize,
    repr: RiskRepr,
}

#[derive(Debug, Clone)]
enum RiskRepr {
    Affine { mean_x: Vec<Vec<f64>>, mean_offset: Vec<f64> },
    Generic { loss: LossSpec, groups: Vec<Vec<(DataPoint, f64)>> },
}

impl GroupRisks {
    /// Uniform weights over each dataset.
    pub fn from_collection(collection: &DatasetCollection, loss: &LossSpec) -> Result<Self> {
        collection.check_against(loss)?;
        let n = collection.size() as f64;
        let groups = collection
            .datasets()
            .iter()
            .map(|s| s.iter().map(|z| (z.clone(), 1.0 / n)).collect())
            .collect();
        Ok(Self::from_weighted(groups, loss))
    }

    /// Exact population risks of finite distributions, or of balls under
    /// the affine loss.
    pub fn from_distributions(dists: &[GroupDistribution], loss: &LossSpec) -> Result<Self> {
        let mut groups = Vec::with_capacity(dists.len());
        for d in dists {
            match d {
                GroupDistribution::Finite { support } => {
                    for s in support {
                        loss.check_point(&s.point)?;
                    }
                    groups.push(support.iter().map(|s| (s.point.clone(), s.prob)).collect());
                }
                GroupDistribution::UniformBall { x_center, y, shift, .. } if loss.kind == LossKind::Affine => {
                    groups.push(vec![(DataPoint { x: x_center.clone(), y: *y, shift: *shift }, 1.0)]);
                }
                GroupDistribution::UniformBall { .. } => {
                    return Err(Error::UnsupportedMode(
                        "exact risk over a ball is only available for the affine loss".into(),
                    ))
                }
            }
        }
        Ok(Self::from_weighted(groups, loss))
    }

    fn from_weighted(groups: Vec<Vec<(DataPoint, f64)>>, loss: &LossSpec) -> Self {
        let dim = loss.dim;
        let repr = match loss.kind {
            LossKind::Affine => {
                let mut mean_x = Vec::with_capacity(groups.len());
                let mut mean_offset = Vec::with_capacity(groups.len());
                for g in &groups {
                    let mut mx = vec![0.0; dim];
                    let mut mo = 0.0;
                    for (z, wgt) in g {
                        crate::numkit::axpy(*wgt, &z.x, &mut mx);
                        mo += wgt * (z.y + z.shift);
                    }
                    mean_x.push(mx);
                    mean_offset.push(mo);
                }
                RiskRepr::Affine { mean_x, mean_offset }
            }
            LossKind::Hinge => RiskRepr::Generic { loss: loss.clone(), groups },
        };
        Self { dim, repr }
    }

    pub fn groups(&self) -> usize {
        match &self.repr {
            RiskRepr::Affine { mean_offset, .. } => mean_offset.len(),
            RiskRepr::Generic { groups, .. } => groups.len(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// True when every group risk is affine in `w`.
    pub fn is_affine(&self) -> bool {
        matches!(self.repr, RiskRepr::Affine { .. })
    }

    pub fn risks(&self, w: &[f64]) -> Vec<f64> {
        match &self.repr {
            RiskRepr::Affine { mean_x, mean_offset } => {
                mean_x.iter().zip(mean_offset).map(|(mx, mo)| crate::numkit::dot(w, mx) + mo).collect()
            }
            RiskRepr::Generic { loss, groups } => {
                groups.iter().map(|g| g.iter().map(|(z, wgt)| wgt * loss.value(w, z)).sum()).collect()
            }
        }
    }

    /// `sum_i weights_i * grad L_i(w)`.
    pub fn weighted_gradient(&self, w: &[f64], weights: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        match &self.repr {
            RiskRepr::Affine { mean_x, .. } => {
                for (mx, lam) in mean_x.iter().zip(weights) {
                    crate::numkit::axpy(*lam, mx, &mut g);
                }
            }
            RiskRepr::Generic { loss, groups } => {
                for (grp, lam) in groups.iter().zip(weights) {
                    if *lam == 0.0 {
                        continue;
                    }
                    for (z, wgt) in grp {
                        loss.add_gradient(w, z, lam * wgt, &mut g);
                    }
                }
            }
        }
        g
    }
}
