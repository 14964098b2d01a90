use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numkit::{dot, norm, project_unchecked};

/// The feasible set `W`: a closed Euclidean ball of diameter `M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpace {
    pub center: Vec<f64>,
    pub diameter: f64,
}

/// Relative slack allowed by membership tests.
const MEMBERSHIP_TOL: f64 = 1e-9;

impl ParamSpace {
    pub fn new(center: Vec<f64>, diameter: f64) -> Result<Self> {
        if center.is_empty() {
            return invalid("parameter space needs dimension >= 1");
        }
        if !(diameter > 0.0 && diameter.is_finite()) {
            return invalid("diameter must be positive and finite");
        }
        Ok(Self { center, diameter })
    }

    /// Ball of diameter `diameter` about the origin.
    pub fn centered(dim: usize, diameter: f64) -> Result<Self> {
        Self::new(vec![0.0; dim], diameter)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn radius(&self) -> f64 {
        self.diameter / 2.0
    }

    pub fn contains(&self, w: &[f64]) -> bool {
        w.len() == self.dim()
            && crate::numkit::distance(w, &self.center) <= self.radius() * (1.0 + MEMBERSHIP_TOL) + 1e-15
    }

    pub fn project(&self, w: &[f64]) -> Vec<f64> {
        project_unchecked(w, &self.center, self.radius())
    }

    /// Largest distance from `anchor` to any point of the ball.
    pub fn farthest_distance(&self, anchor: &[f64]) -> f64 {
        self.radius() + crate::numkit::distance(anchor, &self.center)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// `<w, x> + y + shift`
    Affine,
    /// `max(0, 1 - y <w, x>) + shift`
    Hinge,
}

/// A record `z = (x, y)` plus a nonnegative additive `shift` used by the
/// augmented lower-bound instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub x: Vec<f64>,
    pub y: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub shift: f64,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

impl DataPoint {
    pub fn new(x: Vec<f64>, y: f64) -> Self {
        Self { x, y, shift: 0.0 }
    }

    pub fn with_shift(mut self, shift: f64) -> Self {
        self.shift = shift;
        self
    }
}

/// Convex loss with declared Lipschitz constant `L` and range bound `B`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub dim: usize,
    pub lipschitz: f64,
    pub range_bound: f64,
    /// Largest admissible `shift`; already included in `range_bound`.
    #[serde(default)]
    pub shift_bound: f64,
}

/// Builds a loss whose declared constants are tight for data with
/// `|x| <= feature_bound` over `space`.
///
/// Affine: `L = feature_bound`, `B = M * feature_bound`; the offsets `y` of
/// the data must keep the loss inside `[0, B]` on `W`.
/// Hinge: `L = feature_bound`, `B = 1 + (|center| + M/2) * feature_bound`.
pub fn make_loss(kind: LossKind, dim: usize, space: &ParamSpace, feature_bound: f64) -> Result<LossSpec> {
    if dim == 0 {
        return invalid("loss dimension must be >= 1");
    }
    if dim != space.dim() {
        return invalid(format!("loss dimension {dim} does not match space dimension {}", space.dim()));
    }
    if !(feature_bound > 0.0 && feature_bound.is_finite()) {
        return invalid("feature bound must be positive");
    }
    let range_bound = match kind {
        LossKind::Affine => space.diameter * feature_bound,
        LossKind::Hinge => 1.0 + (norm(&space.center) + space.radius()) * feature_bound,
    };
    Ok(LossSpec { kind, dim, lipschitz: feature_bound, range_bound, shift_bound: 0.0 })
}

impl LossSpec {
    /// `D = max(L, B)`.
    pub fn scale(&self) -> f64 {
        self.lipschitz.max(self.range_bound)
    }

    /// Same loss with room for shifts up to `shift_bound`; `B` grows accordingly.
    pub fn with_shift_bound(&self, shift_bound: f64) -> Self {
        let mut out = self.clone();
        out.range_bound += shift_bound - self.shift_bound;
        out.shift_bound = shift_bound;
        out
    }

    /// Checks `z` against the declared bounds.
    pub fn check_point(&self, z: &DataPoint) -> Result<()> {
        if z.x.len() != self.dim {
            return Err(Error::ContractViolation(format!(
                "data point has dimension {}, loss expects {}",
                z.x.len(),
                self.dim
            )));
        }
        let xn = norm(&z.x);
        if !(xn <= self.lipschitz * (1.0 + 1e-12)) {
            return Err(Error::ContractViolation(format!(
                "feature norm {xn} exceeds declared Lipschitz bound {}",
                self.lipschitz
            )));
        }
        if !(z.shift >= 0.0 && z.shift <= self.shift_bound * (1.0 + 1e-12)) {
            return Err(Error::ContractViolation(format!(
                "shift {} outside [0, {}]",
                z.shift, self.shift_bound
            )));
        }
        if self.kind == LossKind::Hinge && !(z.y.abs() <= 1.0) {
            return Err(Error::ContractViolation(format!("hinge label {} outside [-1, 1]", z.y)));
        }
        if !z.y.is_finite() {
            return Err(Error::ContractViolation("non-finite target".into()));
        }
        Ok(())
    }

    /// Loss value after checking the data point.
    pub fn evaluate(&self, w: &[f64], z: &DataPoint) -> Result<f64> {
        self.check_point(z)?;
        if w.len() != self.dim {
            return invalid("parameter dimension does not match loss");
        }
        Ok(self.value(w, z))
    }

    /// Loss value without bound checks.
    pub fn value(&self, w: &[f64], z: &DataPoint) -> f64 {
        let inner = dot(w, &z.x);
        let base = match self.kind {
            LossKind::Affine => inner + z.y,
            LossKind::Hinge => (1.0 - z.y * inner).max(0.0),
        };
        base + z.shift
    }

    /// Adds `scale * grad_w loss(w, z)` into `out`. For the hinge, the
    /// subgradient at the kink is zero.
    pub fn add_gradient(&self, w: &[f64], z: &DataPoint, scale: f64, out: &mut [f64]) {
        match self.kind {
            LossKind::Affine => crate::numkit::axpy(scale, &z.x, out),
            LossKind::Hinge => {
                if 1.0 - z.y * dot(w, &z.x) > 0.0 {
                    crate::numkit::axpy(-scale * z.y, &z.x, out);
                }
            }
        }
    }

    pub fn gradient(&self, w: &[f64], z: &DataPoint) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        self.add_gradient(w, z, 1.0, &mut g);
        g
    }
}

/// Worst observations from a randomized audit of a loss's declared properties.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossAudit {
    pub min_value: f64,
    pub max_value: f64,
    pub max_gradient_norm: f64,
    /// Largest `|f(w1) - f(w2)| - L |w1 - w2|`.
    pub worst_lipschitz_excess: f64,
    /// Largest `f(t w1 + (1-t) w2) - t f(w1) - (1-t) f(w2)`.
    pub worst_convexity_excess: f64,
    /// Largest relative gap between the gradient and central differences,
    /// over points away from hinge kinks.
    pub worst_gradient_error: f64,
}

/// Randomized audit over `trials` draws of `(w1, w2, t, z)` with `w`
/// uniform in `space` and `z` from `points`.
pub fn audit_loss(
    loss: &LossSpec,
    space: &ParamSpace,
    points: &[DataPoint],
    trials: usize,
    rng: &mut crate::numkit::RandomStream,
) -> Result<LossAudit> {
    if points.is_empty() {
        return invalid("audit needs at least one data point");
    }
    for z in points {
        loss.check_point(z)?;
    }
    let mut audit = LossAudit {
        min_value: f64::INFINITY,
        max_value: f64::NEG_INFINITY,
        worst_lipschitz_excess: f64::NEG_INFINITY,
        worst_convexity_excess: f64::NEG_INFINITY,
        ..Default::default()
    };
    for _ in 0..trials {
        let w1 = super::uniform_in_ball(&space.center, space.radius(), rng);
        let w2 = super::uniform_in_ball(&space.center, space.radius(), rng);
        let t = rng.uniform();
        let z = &points[rng.index_below(points.len())];
        let (f1, f2) = (loss.value(&w1, z), loss.value(&w2, z));
        audit.min_value = audit.min_value.min(f1);
        audit.max_value = audit.max_value.max(f1);
        let g = loss.gradient(&w1, z);
        audit.max_gradient_norm = audit.max_gradient_norm.max(norm(&g));
        let lip = (f1 - f2).abs() - loss.lipschitz * crate::numkit::distance(&w1, &w2);
        audit.worst_lipschitz_excess = audit.worst_lipschitz_excess.max(lip);
        let mid: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| t * a + (1.0 - t) * b).collect();
        let cvx = loss.value(&mid, z) - t * f1 - (1.0 - t) * f2;
        audit.worst_convexity_excess = audit.worst_convexity_excess.max(cvx);

        let h = 1e-6;
        let near_kink = loss.kind == LossKind::Hinge && (1.0 - z.y * dot(&w1, &z.x)).abs() < 1e-4;
        if !near_kink {
            let mut fd = vec![0.0; loss.dim];
            for k in 0..loss.dim {
                let mut up = w1.clone();
                let mut down = w1.clone();
                up[k] += h;
                down[k] -= h;
                fd[k] = (loss.value(&up, z) - loss.value(&down, z)) / (2.0 * h);
            }
            let err = crate::numkit::distance(&fd, &g) / norm(&g).max(1.0);
            audit.worst_gradient_error = audit.worst_gradient_error.max(err);
        }
    }
    Ok(audit)
}
