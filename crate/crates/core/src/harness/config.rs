//! Experiment configuration (JSON, unknown keys rejected).
//!
//! ```json
//! {
//!   "algorithm": "phased-erm",
//!   "instance": { "type": "two_point" },
//!   "K": 8192,
//!   "epsilon": 1.0,
//!   "delta": 1e-5,
//!   "seeds": [0, 1, 2],
//!   "evaluation": { "mode": "population", "baseline": "analytic", "n_eval": 10000 },
//!   "params": { "eta_multiplier": 1.0 },
//!   "output": "results.csv",
//!   "record_wall_time": false
//! }
//! ```
//!
//! `algorithm` is one of `phased-erm`, `oco-game`, `mgr`, `ags`,
//! `nonprivate-baseline`. `epsilon` is a positive number or the string
//! `"inf"`. Instances are `two_point`, `affine` (random finite-support
//! affine groups), `hard` (the lower-bound reduction of another instance),
//! `file` (a path to an instance JSON) or `inline` (an instance object).
//! `evaluation.mode` and `evaluation.baseline` are optional: the mode
//! defaults to `empirical` for `mgr`/`ags` and `population` otherwise, and
//! the baseline follows analytic, then grid (`d <= 2`), then the non-private
//! reference. `record_wall_time` fills the `wall_ms` column; it is off by
//! default so that output is reproducible byte for byte.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::mechanisms::PrivacyBudget;
use crate::numkit::RandomStream;
use crate::problem::{build_hard_instance, build_two_point_instance, AffineGenerator, HardInstance, HardMode, Instance};
use crate::saddle::SaddleSolver;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    PhasedErm,
    OcoGame,
    Mgr,
    Ags,
    NonprivateBaseline,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::PhasedErm => "phased-erm",
            Algorithm::OcoGame => "oco-game",
            Algorithm::Mgr => "mgr",
            Algorithm::Ags => "ags",
            Algorithm::NonprivateBaseline => "nonprivate-baseline",
        }
    }

    /// True for the solvers that run on fixed datasets.
    pub fn is_offline(self) -> bool {
        matches!(self, Algorithm::Mgr | Algorithm::Ags)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Privacy parameter `ε`, serialized as a number or `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Epsilon(pub f64);

impl Epsilon {
    pub const INFINITE: Epsilon = Epsilon(f64::INFINITY);

    pub fn parse(text: &str) -> Result<Self> {
        let t = text.trim();
        if t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("infinity") {
            return Ok(Self::INFINITE);
        }
        let v: f64 = t.parse().map_err(|_| Error::Config(format!("bad epsilon {text:?}")))?;
        if !(v > 0.0) || v.is_infinite() {
            return Err(Error::Config(format!("epsilon must be positive and finite or \"inf\", got {text:?}")));
        }
        Ok(Self(v))
    }
}

impl fmt::Display for Epsilon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl Serialize for Epsilon {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Epsilon {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        let text = match Raw::deserialize(d)? {
            Raw::Number(v) => v.to_string(),
            Raw::Text(t) => t,
        };
        Epsilon::parse(&text).map_err(serde::de::Error::custom)
    }
}

fn default_lipschitz() -> f64 {
    1.0
}

fn default_diameter() -> f64 {
    2.0
}

fn default_support() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum InstanceSpec {
    TwoPoint {},
    Affine {
        d: usize,
        p: usize,
        #[serde(default = "default_lipschitz")]
        lipschitz: f64,
        #[serde(default = "default_diameter")]
        diameter: f64,
        #[serde(default = "default_support")]
        support: usize,
        #[serde(default)]
        generator_seed: u64,
    },
    Hard {
        base: Box<InstanceSpec>,
        p: usize,
        #[serde(default)]
        generator_seed: u64,
    },
    File {
        path: PathBuf,
    },
    Inline {
        instance: Box<Instance>,
    },
}

impl InstanceSpec {
    /// Builds the instance; relative file paths resolve against `base_dir`.
    pub fn build(&self, base_dir: &Path) -> Result<Instance> {
        match self {
            InstanceSpec::TwoPoint {} => Ok(build_two_point_instance()),
            InstanceSpec::Affine { d, p, lipschitz, diameter, support, generator_seed } => {
                let mut rng = RandomStream::new(*generator_seed);
                let gen = AffineGenerator::new(*d, *p, *lipschitz, *diameter, &mut rng)?;
                let mut inst = gen.instance(*support, &mut rng)?;
                inst.name = format!("affine-d{d}-p{p}");
                Ok(inst)
            }
            InstanceSpec::Hard { base, p, generator_seed } => {
                let base = base.build(base_dir)?;
                let mut rng = RandomStream::new(*generator_seed);
                match build_hard_instance(HardMode::Population, &base, *p, 1, &mut rng)? {
                    HardInstance::Population(inst) => Ok(inst),
                    HardInstance::Empirical { .. } => unreachable!("population mode requested"),
                }
            }
            InstanceSpec::File { path } => {
                let full = if path.is_absolute() { path.clone() } else { base_dir.join(path) };
                Instance::from_json(&std::fs::read_to_string(&full)?)
            }
            InstanceSpec::Inline { instance } => {
                instance.validate()?;
                Ok((**instance).clone())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Population,
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineMode {
    Analytic,
    Grid,
    NonprivateBaseline,
}

impl BaselineMode {
    pub fn name(self) -> &'static str {
        match self {
            BaselineMode::Analytic => "analytic",
            BaselineMode::Grid => "grid",
            BaselineMode::NonprivateBaseline => "nonprivate-baseline",
        }
    }
}

fn default_n_eval() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<EvalMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineMode>,
    /// Monte Carlo samples per group when a risk has no closed form.
    #[serde(default = "default_n_eval")]
    pub n_eval: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { mode: None, baseline: None, n_eval: default_n_eval() }
    }
}

fn default_multiplier() -> f64 {
    1.0
}

/// Solver knobs. Unset values take the defaults of each algorithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgoParams {
    /// Scales the default step size (`η` for phased ERM and AGS, the FTRL
    /// step for the game, `η_w` for MGR).
    #[serde(default = "default_multiplier")]
    pub eta_multiplier: f64,
    /// Rounds `T` for the game, MGR and AGS.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rounds: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub project_anchors: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SaddleSolver>,
}

impl Default for AlgoParams {
    fn default() -> Self {
        Self { eta_multiplier: 1.0, rounds: None, batch_size: None, project_anchors: false, solver: None }
    }
}

fn default_delta() -> f64 {
    1e-5
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub instance: InstanceSpec,
    #[serde(rename = "K")]
    pub k: usize,
    pub epsilon: Epsilon,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub evaluation: EvalConfig,
    #[serde(default)]
    pub params: AlgoParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub record_wall_time: bool,
}

impl ExperimentConfig {
    pub fn new(algorithm: Algorithm, instance: InstanceSpec, k: usize, epsilon: Epsilon) -> Self {
        Self {
            algorithm,
            instance,
            k,
            epsilon,
            delta: default_delta(),
            seeds: default_seeds(),
            evaluation: EvalConfig::default(),
            params: AlgoParams::default(),
            output: None,
            record_wall_time: false,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn privacy(&self) -> Result<PrivacyBudget> {
        if self.epsilon.0.is_infinite() {
            if !(self.delta > 0.0 && self.delta < 1.0) {
                return Err(Error::Config("delta must lie in (0, 1)".into()));
            }
            return Ok(PrivacyBudget::non_private(self.delta));
        }
        PrivacyBudget::new(self.epsilon.0, self.delta)
    }

    /// Checks everything that can be checked without running.
    pub fn validate(&self) -> Result<()> {
        self.privacy()?;
        if self.k == 0 {
            return Err(Error::Config("K must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("need at least one seed".into()));
        }
        if !(self.params.eta_multiplier > 0.0 && self.params.eta_multiplier.is_finite()) {
            return Err(Error::Config("eta_multiplier must be positive and finite".into()));
        }
        if self.params.rounds == Some(0) || self.params.batch_size == Some(0) {
            return Err(Error::Config("rounds and batch_size must be positive".into()));
        }
        if self.evaluation.n_eval < 2 {
            return Err(Error::Config("n_eval must be at least 2".into()));
        }
        Ok(())
    }

    /// A copy with the instance inlined and the evaluation mode and baseline
    /// filled in, so the result describes the run completely.
    pub fn resolve(&self, base_dir: &Path) -> Result<(ExperimentConfig, Instance)> {
        self.validate()?;
        let instance = self.instance.build(base_dir)?;
        let mode = self.evaluation.mode.unwrap_or(if self.algorithm.is_offline() {
            EvalMode::Empirical
        } else {
            EvalMode::Population
        });
        let baseline = self.evaluation.baseline.unwrap_or_else(|| default_baseline(&instance, mode));
        let mut resolved = self.clone();
        resolved.instance = InstanceSpec::Inline { instance: Box::new(instance.clone()) };
        resolved.evaluation.mode = Some(mode);
        resolved.evaluation.baseline = Some(baseline);
        Ok((resolved, instance))
    }
}

/// Analytic when the instance carries an optimum that applies in `mode`,
/// else a grid for `d <= 2`, else the non-private reference.
pub fn default_baseline(instance: &Instance, mode: EvalMode) -> BaselineMode {
    let analytic = instance.optimum.is_some() && (mode == EvalMode::Population || instance.is_deterministic());
    if analytic {
        BaselineMode::Analytic
    } else if instance.d <= 2 {
        BaselineMode::Grid
    } else {
        BaselineMode::NonprivateBaseline
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epsilon_accepts_inf() {
        let c: ExperimentConfig = ExperimentConfig::from_json(
            r#"{"algorithm":"mgr","instance":{"type":"two_point"},"K":512,"epsilon":"inf"}"#,
        )
        .unwrap();
        assert!(c.epsilon.0.is_infinite());
        assert!(!c.privacy().unwrap().is_private());
        let back = ExperimentConfig::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in [
            r#"{"algorithm":"mgr","instance":{"type":"two_point"},"K":512,"epsilon":1,"bogus":1}"#,
            r#"{"algorithm":"mgr","instance":{"type":"two_point","x":1},"K":512,"epsilon":1}"#,
            r#"{"algorithm":"mgr","instance":{"type":"two_point"},"K":512,"epsilon":1,"params":{"eta":2}}"#,
        ] {
            assert!(matches!(ExperimentConfig::from_json(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn bad_epsilon_rejected() {
        assert!(Epsilon::parse("0").is_err());
        assert!(Epsilon::parse("-1").is_err());
        assert_eq!(Epsilon::parse("0.5").unwrap(), Epsilon(0.5));
        assert_eq!(Epsilon::parse("INF").unwrap().to_string(), "inf");
    }

    #[test]
    fn resolution_fills_defaults() {
        let c = ExperimentConfig::new(Algorithm::Mgr, InstanceSpec::TwoPoint {}, 512, Epsilon(1.0));
        let (r, inst) = c.resolve(Path::new(".")).unwrap();
        assert_eq!(r.evaluation.mode, Some(EvalMode::Empirical));
        assert_eq!(r.evaluation.baseline, Some(BaselineMode::Analytic));
        assert_eq!(inst.name, "two-point");
        let affine = InstanceSpec::Affine { d: 3, p: 2, lipschitz: 1.0, diameter: 2.0, support: 4, generator_seed: 1 };
        let c = ExperimentConfig::new(Algorithm::PhasedErm, affine, 512, Epsilon(1.0));
        let (r, _) = c.resolve(Path::new(".")).unwrap();
        assert_eq!(r.evaluation.baseline, Some(BaselineMode::NonprivateBaseline));
    }
}
