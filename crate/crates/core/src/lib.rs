//! Differentially private worst-group risk minimization.
//!
//! The crate provides three private solver families for minimizing
//! `R(w) = max_i E_{z ~ D_i} l(w, z)` over a Euclidean ball:
//!
//! * [`phased_erm`]: phased regularized ERM on fresh samples with Gaussian
//!   output perturbation,
//! * [`online`]: a two-player game between a tree-aggregated DP-FTRL
//!   min-player and an EXP3 max-player fed Laplace-privatized losses,
//! * [`empirical`]: noisy SGD with multiplicative group reweighting or with
//!   report-noisy-max group selection, on fixed datasets,
//!
//! together with the non-private saddle-point machinery in [`saddle`], the
//! noise primitives in [`mechanisms`], and an experiment [`harness`].

// `!(x > 0.0)` is used throughout to reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod empirical;
pub mod error;
pub mod harness;
pub mod mechanisms;
pub mod numkit;
pub mod online;
pub mod phased_erm;
pub mod problem;
pub mod saddle;

pub use error::{Error, Result};
pub use mechanisms::{NoiseScales, PrivacyBudget};
pub use numkit::{GroupWeights, ParamVector, RandomStream};
pub use problem::{
    DataPoint, DatasetCollection, GroupDistribution, Instance, LossKind, LossSpec, ParamSpace, SampleOracleSet,
};
pub use saddle::{RegularizedObjective, SaddleCertificate};
