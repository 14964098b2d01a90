//! Synthetic instances and their JSON file format.
//!
//! # Instance file schema (`wgdp-instance/1`)
//!
//! ```json
//! {
//!   "schema": "wgdp-instance/1",
//!   "name": "two-point",
//!   "d": 1,
//!   "p": 2,
//!   "space": { "center": [0.0], "diameter": 2.0 },
//!   "loss": { "kind": "affine", "dim": 1, "lipschitz": 1.0, "range_bound": 2.0, "shift_bound": 0.0 },
//!   "groups": [
//!     { "type": "finite", "support": [ { "x": [1.0], "y": 1.0, "prob": 1.0 } ] },
//!     { "type": "finite", "support": [ { "x": [-1.0], "y": 1.0, "prob": 1.0 } ] }
//!   ],
//!   "optimum": { "value": 1.0, "point": [0.0] }
//! }
//! ```
//!
//! `loss.lipschitz`, `loss.range_bound` and `space.diameter` are the declared
//! `(L, B, M)`. Support entries may carry a `shift` (default 0). Groups may
//! also be `{"type": "uniform_ball", "x_center": [...], "x_radius": r, "y": b}`.
//! `optimum` is optional and records the analytic min-max value.

use serde::{Deserialize, Serialize};

use super::data::{DatasetCollection, GroupDistribution, WeightedPoint};
use super::loss::{make_loss, DataPoint, LossKind, LossSpec, ParamSpace};
use crate::error::{invalid, Error, Result};
use crate::numkit::{dot, norm, RandomStream};

pub const INSTANCE_SCHEMA: &str = "wgdp-instance/1";

/// Analytic minimizer of the worst-group population risk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnownOptimum {
    pub value: f64,
    pub point: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Instance {
    pub schema: String,
    pub name: String,
    pub d: usize,
    pub p: usize,
    pub space: ParamSpace,
    pub loss: LossSpec,
    pub groups: Vec<GroupDistribution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimum: Option<KnownOptimum>,
}

impl Instance {
    pub fn new(
        name: impl Into<String>,
        space: ParamSpace,
        loss: LossSpec,
        groups: Vec<GroupDistribution>,
        optimum: Option<KnownOptimum>,
    ) -> Result<Self> {
        let inst = Self {
            schema: INSTANCE_SCHEMA.into(),
            name: name.into(),
            d: space.dim(),
            p: groups.len(),
            space,
            loss,
            groups,
            optimum,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != INSTANCE_SCHEMA {
            return Err(Error::Config(format!("unknown instance schema {:?}", self.schema)));
        }
        if self.p == 0 || self.p != self.groups.len() {
            return invalid("p must equal the number of groups and be >= 1");
        }
        if self.d != self.space.dim() || self.d != self.loss.dim {
            return invalid("d must match the space and loss dimension");
        }
        for g in &self.groups {
            g.validate()?;
            if g.dim() != self.d {
                return invalid("group distribution dimension mismatch");
            }
            if let GroupDistribution::Finite { support } = g {
                for s in support {
                    self.loss.check_point(&s.point)?;
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let inst: Instance = serde_json::from_str(text)?;
        inst.validate()?;
        Ok(inst)
    }

    /// True when every group is a point mass, so any dataset drawn from the
    /// instance has the same empirical risks as the population.
    pub fn is_deterministic(&self) -> bool {
        self.groups.iter().all(GroupDistribution::is_point_mass)
    }
}

/// `d = 1`, `W = [-1, 1]`, affine loss, `D_1 = {(x=+1, b=1)}`,
/// `D_2 = {(x=-1, b=1)}`. Worst-group risk is `1 + |w|`, minimized at 0.
pub fn build_two_point_instance() -> Instance {
    let space = ParamSpace::centered(1, 2.0).expect("valid space");
    let loss = make_loss(LossKind::Affine, 1, &space, 1.0).expect("valid loss");
    let groups = vec![
        GroupDistribution::point_mass(DataPoint::new(vec![1.0], 1.0)),
        GroupDistribution::point_mass(DataPoint::new(vec![-1.0], 1.0)),
    ];
    Instance::new("two-point", space, loss, groups, Some(KnownOptimum { value: 1.0, point: vec![0.0] }))
        .expect("two-point instance is valid")
}

/// Uniform draw from the ball `B(center, radius)`.
pub fn uniform_in_ball(center: &[f64], radius: f64, rng: &mut RandomStream) -> Vec<f64> {
    let d = center.len();
    let dir: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
    let n = norm(&dir);
    let r = radius * rng.uniform().powf(1.0 / d as f64);
    if n == 0.0 {
        return center.to_vec();
    }
    center.iter().zip(&dir).map(|(c, u)| c + r * u / n).collect()
}

/// Generator for random affine data whose loss stays inside `[0, B]` on `W`.
///
/// Each group has a mean feature drawn uniformly in the ball of radius
/// `0.7 L`; features are that mean plus a uniform perturbation of radius
/// `0.3 L`, so `|x| <= L`. Offsets are `y = r|x| - <c, x> + s` with
/// `s ~ U[0, M (L - |x|)]`, which keeps the loss in `[0, M L] = [0, B]`.
#[derive(Debug, Clone)]
pub struct AffineGenerator {
    pub space: ParamSpace,
    pub loss: LossSpec,
    group_means: Vec<Vec<f64>>,
}

impl AffineGenerator {
    pub fn new(d: usize, p: usize, lipschitz: f64, diameter: f64, rng: &mut RandomStream) -> Result<Self> {
        if p == 0 {
            return invalid("p must be >= 1");
        }
        let space = ParamSpace::centered(d, diameter)?;
        let loss = make_loss(LossKind::Affine, d, &space, lipschitz)?;
        let origin = vec![0.0; d];
        let group_means = (0..p).map(|_| uniform_in_ball(&origin, 0.7 * lipschitz, rng)).collect();
        Ok(Self { space, loss, group_means })
    }

    pub fn groups(&self) -> usize {
        self.group_means.len()
    }

    pub fn sample_point(&self, group: usize, rng: &mut RandomStream) -> DataPoint {
        let l = self.loss.lipschitz;
        let x = uniform_in_ball(&self.group_means[group], 0.3 * l, rng);
        let xn = norm(&x);
        let slack = rng.uniform() * self.space.diameter * (l - xn).max(0.0);
        let y = self.space.radius() * xn - dot(&self.space.center, &x) + slack;
        DataPoint::new(x, y)
    }

    /// A point from a uniformly chosen group.
    pub fn sample_any(&self, rng: &mut RandomStream) -> DataPoint {
        let g = rng.index_below(self.groups());
        self.sample_point(g, rng)
    }

    pub fn collection(&self, n: usize, rng: &mut RandomStream) -> Result<DatasetCollection> {
        let datasets = (0..self.groups())
            .map(|g| (0..n).map(|_| self.sample_point(g, rng)).collect())
            .collect();
        DatasetCollection::new(datasets)
    }

    /// Finite-support instance with `support` equally likely points per group.
    pub fn instance(&self, support: usize, rng: &mut RandomStream) -> Result<Instance> {
        if support == 0 {
            return invalid("support size must be >= 1");
        }
        let groups = (0..self.groups())
            .map(|g| GroupDistribution::Finite {
                support: (0..support)
                    .map(|_| WeightedPoint { point: self.sample_point(g, rng), prob: 1.0 / support as f64 })
                    .collect(),
            })
            .collect();
        Instance::new("random-affine", self.space.clone(), self.loss.clone(), groups, None)
    }
}

/// Collection whose every loss is the constant `value` (`x = 0`, `y = value`).
/// The regularized saddle point is `(anchor, uniform)`.
pub fn constant_loss_collection(
    d: usize,
    p: usize,
    n: usize,
    value: f64,
    diameter: f64,
) -> Result<(ParamSpace, LossSpec, DatasetCollection)> {
    let space = ParamSpace::centered(d, diameter)?;
    let loss = make_loss(LossKind::Affine, d, &space, 1.0)?;
    if !(0.0..=loss.range_bound).contains(&value) {
        return invalid("constant value outside [0, B]");
    }
    let datasets = vec![vec![DataPoint::new(vec![0.0; d], value); n]; p];
    Ok((space, loss, DatasetCollection::new(datasets)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HardMode {
    Empirical,
    Population,
}

/// Output of [`build_hard_instance`].
#[derive(Debug, Clone)]
pub enum HardInstance {
    Empirical { space: ParamSpace, loss: LossSpec, collection: DatasetCollection },
    Population(Instance),
}

/// Lower-bound reduction: the augmented loss `l'(w, (z, y)) = l(w, z) + y`
/// with `y = B` on group 0 and `y = 0` elsewhere, so group 0 is the worst
/// group at every `w`.
///
/// Group `i` draws its `z` from base group `i mod p_base`. In empirical mode
/// each group gets `n` points; in population mode `n` is ignored.
pub fn build_hard_instance(
    mode: HardMode,
    base: &Instance,
    p: usize,
    n: usize,
    rng: &mut RandomStream,
) -> Result<HardInstance> {
    if p == 0 {
        return invalid("p must be >= 1");
    }
    if base.loss.shift_bound != 0.0 {
        return invalid("base loss must not already carry shifts");
    }
    let b = base.loss.range_bound;
    let loss = base.loss.with_shift_bound(b);
    let shift_for = |group: usize| if group == 0 { b } else { 0.0 };
    match mode {
        HardMode::Empirical => {
            if n == 0 {
                return invalid("n must be >= 1");
            }
            let datasets = (0..p)
                .map(|i| {
                    let dist = &base.groups[i % base.p];
                    (0..n).map(|_| dist.sample(rng).with_shift(shift_for(i))).collect()
                })
                .collect();
            Ok(HardInstance::Empirical {
                space: base.space.clone(),
                loss,
                collection: DatasetCollection::new(datasets)?,
            })
        }
        HardMode::Population => {
            let groups = (0..p)
                .map(|i| match &base.groups[i % base.p] {
                    GroupDistribution::Finite { support } => GroupDistribution::Finite {
                        support: support
                            .iter()
                            .map(|s| WeightedPoint { point: s.point.clone().with_shift(shift_for(i)), prob: s.prob })
                            .collect(),
                    },
                    GroupDistribution::UniformBall { x_center, x_radius, y, .. } => GroupDistribution::UniformBall {
                        x_center: x_center.clone(),
                        x_radius: *x_radius,
                        y: *y,
                        shift: shift_for(i),
                    },
                })
                .collect();
            let optimum = base
                .optimum
                .as_ref()
                .filter(|_| base.p == 1)
                .map(|o| KnownOptimum { value: o.value + b, point: o.point.clone() });
            Ok(HardInstance::Population(Instance::new(
                format!("hard-{}", base.name),
                base.space.clone(),
                loss,
                groups,
                optimum,
            )?))
        }
    }
}
