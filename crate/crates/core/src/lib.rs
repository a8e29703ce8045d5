//! Conformal prediction intervals for individual treatment effects.
//!
//! Stage one builds counterfactual outcome sets with weighted split-conformal
//! prediction, scoring calibration points by an estimated conditional density
//! (or by CQR residuals for the baseline). Stage two turns the resulting
//! per-unit effect intervals into a predictor for new covariates using one of
//! four strategies: a secondary split-conformal step (exact), a Bonferroni
//! interval difference (naive), plug-in conditional quantiles (inexact), or
//! propensity-mixed per-arm endpoint means (X).

pub mod conformal;
pub mod density;
pub mod error;
pub mod evaluation;
pub mod ite;
pub mod learners;
pub mod rng;
pub mod simulation;
pub mod stats;
pub mod tabular;

pub use error::{Error, Result};
