//! Synthetic potential-outcome data with known effects.
//!
//! Covariates are uniform on the unit cube. Treatment depends on `x1` only,
//! both outcome surfaces are built from `g(x1) g(x2)`, and noise is either
//! unit-variance or scaled by `-log(x1)`. Four scenarios come from crossing
//! the two noise kinds with `gamma` in {1 (no effect), 0 (heterogeneous)}.

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, Open01, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::rng::{derive_seed_str, rng};
use crate::tabular::{Columns, Dataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaKind {
    Homoscedastic,
    Heteroscedastic,
}

fn default_n() -> usize {
    5000
}
fn default_n_test() -> usize {
    1000
}
fn default_d() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default = "default_d")]
    pub d: usize,
    pub sigma_kind: SigmaKind,
    /// 1: no treatment effect; 0: heterogeneous effect.
    pub gamma: u8,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn new(sigma_kind: SigmaKind, gamma: u8, seed: u64) -> Self {
        Self {
            n: default_n(),
            n_test: default_n_test(),
            d: default_d(),
            sigma_kind,
            gamma,
            seed,
        }
    }

    /// The four standard scenarios in a fixed order.
    pub fn standard(seed: u64) -> Vec<Self> {
        vec![
            Self::new(SigmaKind::Homoscedastic, 1, seed),
            Self::new(SigmaKind::Heteroscedastic, 1, seed),
            Self::new(SigmaKind::Homoscedastic, 0, seed),
            Self::new(SigmaKind::Heteroscedastic, 0, seed),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n_test == 0 {
            return Err(Error::InvalidArgument("n and n_test must be at least 1".into()));
        }
        if self.d < 2 {
            return Err(Error::InvalidArgument(format!("d = {} but at least 2 covariates are needed", self.d)));
        }
        if self.gamma > 1 {
            return Err(Error::InvalidArgument(format!("gamma must be 0 or 1, got {}", self.gamma)));
        }
        Ok(())
    }

    /// Short stable name, e.g. `homo-no-effect`.
    pub fn label(&self) -> String {
        let noise = match self.sigma_kind {
            SigmaKind::Homoscedastic => "homo",
            SigmaKind::Heteroscedastic => "hetero",
        };
        let effect = if self.gamma == 1 { "no-effect" } else { "heterogeneous" };
        format!("{noise}-{effect}")
    }

    pub fn sigma(&self, x1: f64) -> f64 {
        match self.sigma_kind {
            SigmaKind::Homoscedastic => 1.0,
            SigmaKind::Heteroscedastic => -x1.ln(),
        }
    }
}

/// `n x d` matrix of i.i.d. draws from the open unit interval.
pub fn gen_covariates(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    Array2::from_shape_simple_fn((n, d), || Open01.sample(&mut r))
}

/// `(1 + b(x1)) / 4` with `b` the Beta(2, 4) density `20 u (1 - u)^3`.
pub fn true_propensity(x1: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x1) {
        return Err(Error::InvalidArgument(format!("x1 = {x1} outside [0, 1]")));
    }
    let b = 20.0 * x1 * (1.0 - x1).powi(3);
    Ok((1.0 + b) / 4.0)
}

/// Logistic ramp `2 / (1 + exp(-12 (u - 0.5)))`.
pub fn mean_surface(u: f64) -> f64 {
    2.0 / (1.0 + (-12.0 * (u - 0.5)).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedData {
    pub train: Dataset,
    pub test: Dataset,
    /// true propensities of the training rows
    pub true_pi: Vec<f64>,
}

fn gen_sample(cfg: &ScenarioConfig, n: usize, seed: u64) -> Result<(Dataset, Vec<f64>)> {
    let x = gen_covariates(n, cfg.d, derive_seed_str(seed, "covariates"));
    let mut r_a = rng(derive_seed_str(seed, "treatment"));
    let mut r_e = rng(derive_seed_str(seed, "noise"));
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut y1 = Vec::with_capacity(n);
    let mut y0 = Vec::with_capacity(n);
    let mut pi = Vec::with_capacity(n);
    for row in x.rows() {
        let (x1, x2) = (row[0], row[1]);
        let p = true_propensity(x1)?;
        let arm = u8::from(r_a.gen::<f64>() < p);
        let m = mean_surface(x1) * mean_surface(x2);
        let s = cfg.sigma(x1);
        let e1: f64 = StandardNormal.sample(&mut r_e);
        let e0: f64 = StandardNormal.sample(&mut r_e);
        let v1 = m + s * e1;
        let v0 = f64::from(cfg.gamma) * m + s * e0;
        let obs = if arm == 1 { v1 } else { v0 };
        a.push(arm);
        y.push(obs);
        y1.push(v1);
        y0.push(v0);
        pi.push(p);
    }
    let ds = Dataset::new(
        x,
        Columns {
            treatment: Some(a),
            outcome: Some(y),
            y1: Some(y1),
            y0: Some(y0),
            true_ite: None,
        },
    )?;
    Ok((ds, pi))
}

/// Training and test draws from independent substreams of `cfg.seed`.
pub fn gen_scenario(cfg: &ScenarioConfig) -> Result<GeneratedData> {
    cfg.validate()?;
    let (train, true_pi) = gen_sample(cfg, cfg.n, derive_seed_str(cfg.seed, "train"))?;
    let (test, _) = gen_sample(cfg, cfg.n_test, derive_seed_str(cfg.seed, "test"))?;
    Ok(GeneratedData { train, test, true_pi })
}

/// Width of the shortest `1 - alpha` interval for an ITE that is
/// `N(mean, 2 sigma^2)` given x: `2 z_{1 - alpha/2} sqrt(2) sigma`.
pub fn oracle_ite_width(sigma: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} not in (0, 1)")));
    }
    let z = Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(1.0 - alpha / 2.0);
    Ok(2.0 * z * std::f64::consts::SQRT_2 * sigma)
}

/// Oracle width at covariate row `x` under `cfg`'s noise model.
pub fn oracle_width_at(cfg: &ScenarioConfig, x: &[f64], alpha: f64) -> Result<f64> {
    oracle_ite_width(cfg.sigma(x[0]), alpha)
}
