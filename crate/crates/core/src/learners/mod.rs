//! Plug-in supervised learners: a probabilistic binary classifier, a
//! conditional-mean regressor and a conditional-quantile regressor.
//!
//! Two families are available. `boosted-trees` fits depth-limited
//! regression trees stagewise (Newton steps for logistic and squared loss,
//! residual-quantile leaves for pinball loss). `logistic` is the linear
//! family: gradient-descent logistic regression for classification, ordinary
//! least squares for the mean and averaged subgradient descent for
//! quantiles, optionally on a basis augmented with pairwise products.
//! Every fit is a deterministic function of its inputs and config.

mod linear;
mod tree;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use linear::Linear;
use tree::{BoostParams, Ensemble, Loss};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LearnerKind {
    Logistic,
    BoostedTrees,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Basis {
    #[serde(rename = "raw")]
    Raw,
    #[serde(rename = "raw+pairwise")]
    RawPairwise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub kind: LearnerKind,
    pub iterations: usize,
    pub learning_rate: f64,
    /// Tree depth; ignored by the linear family.
    pub max_depth: usize,
    /// Minimum rows on each side of a tree split.
    pub min_leaf: usize,
    /// Classifier probabilities are clipped to `[clip, 1 - clip]`.
    pub probability_clip: f64,
    /// Feature basis; ignored by trees.
    pub basis: Basis,
    /// Trees only: pick the number of trees on a held-out fold, then refit.
    pub early_stopping: bool,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            kind: LearnerKind::BoostedTrees,
            iterations: 1000,
            learning_rate: 0.1,
            max_depth: 6,
            min_leaf: 50,
            probability_clip: 0.01,
            basis: Basis::Raw,
            early_stopping: true,
        }
    }
}

impl LearnerConfig {
    pub fn logistic(iterations: usize, learning_rate: f64, basis: Basis) -> Self {
        Self {
            kind: LearnerKind::Logistic,
            iterations,
            learning_rate,
            basis,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("iterations must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning_rate must be positive".into()));
        }
        if self.max_depth == 0 {
            return Err(Error::InvalidArgument("max_depth must be >= 1".into()));
        }
        if self.min_leaf == 0 {
            return Err(Error::InvalidArgument("min_leaf must be >= 1".into()));
        }
        if !(self.probability_clip > 0.0 && self.probability_clip < 0.5) {
            return Err(Error::InvalidArgument(
                "probability_clip must lie in (0, 0.5)".into(),
            ));
        }
        Ok(())
    }

    fn boost(&self) -> BoostParams {
        BoostParams {
            iterations: self.iterations,
            learning_rate: self.learning_rate,
            max_depth: self.max_depth,
            min_leaf: self.min_leaf,
            early_stopping: self.early_stopping,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Scorer {
    Linear(Linear),
    Trees(Ensemble),
}

impl Scorer {
    fn predict(&self, x: &[f64]) -> f64 {
        match self {
            Scorer::Linear(m) => m.predict(x),
            Scorer::Trees(m) => m.predict(x),
        }
    }

    fn predict_over_last(&self, prefix: &[f64], grid: &[f64]) -> Vec<f64> {
        match self {
            Scorer::Trees(m) => m.predict_over_last(prefix, grid),
            Scorer::Linear(m) => {
                let mut x = prefix.to_vec();
                x.push(0.0);
                let last = prefix.len();
                grid.iter()
                    .map(|&g| {
                        x[last] = g;
                        m.predict(&x)
                    })
                    .collect()
            }
        }
    }
}

fn check_fit_shape(x: ArrayView2<'_, f64>, len: usize) -> Result<()> {
    if x.nrows() != len {
        return Err(Error::Shape(format!(
            "{} feature rows but {len} targets",
            x.nrows()
        )));
    }
    if x.nrows() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 rows to fit, got {}",
            x.nrows()
        )));
    }
    Ok(())
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Shape(format!(
            "expected {expected} features, got {got}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
enum ClassModel {
    Constant(f64),
    Scored(Scorer),
}

/// Fitted probability model for `P(z = 1 | x)` with clipped outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbClassifier {
    model: ClassModel,
    clip: f64,
    dim: usize,
    single_class: bool,
    config: LearnerConfig,
}

impl ProbClassifier {
    /// A model predicting the constant probability `p` (after clipping).
    pub fn constant(p: f64, dim: usize, clip: f64) -> Self {
        Self {
            model: ClassModel::Constant(p),
            clip,
            dim,
            single_class: false,
            config: LearnerConfig {
                probability_clip: clip,
                ..LearnerConfig::default()
            },
        }
    }

    /// Same fitted model with a different clipping interval.
    pub fn with_clip(mut self, clip: f64) -> Self {
        self.clip = clip;
        self
    }

    /// Set when the training labels contained a single class.
    pub fn single_class(&self) -> bool {
        self.single_class
    }

    pub fn clip(&self) -> f64 {
        self.clip
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.config
    }

    fn clipped(&self, p: f64) -> f64 {
        p.clamp(self.clip, 1.0 - self.clip)
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        Ok(self.clipped(match &self.model {
            ClassModel::Constant(p) => *p,
            ClassModel::Scored(s) => crate::stats::sigmoid(s.predict(x)),
        }))
    }

    /// Probabilities at `prefix ++ [g]` for each `g` of an ascending grid.
    pub fn predict_proba_over_last(&self, prefix: &[f64], grid: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, prefix.len() + 1)?;
        Ok(match &self.model {
            ClassModel::Constant(p) => vec![self.clipped(*p); grid.len()],
            ClassModel::Scored(s) => s
                .predict_over_last(prefix, grid)
                .into_iter()
                .map(|r| self.clipped(crate::stats::sigmoid(r)))
                .collect(),
        })
    }
}

/// Fits `P(z = 1 | x)`. Single-class labels yield a clipped constant model
/// with [`ProbClassifier::single_class`] set.
pub fn fit_classifier(x: ArrayView2<'_, f64>, z: &[u8], cfg: &LearnerConfig) -> Result<ProbClassifier> {
    cfg.validate()?;
    check_fit_shape(x, z.len())?;
    if z.iter().any(|&v| v > 1) {
        return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
    }
    let ones = z.iter().filter(|&&v| v == 1).count();
    let (model, single_class) = if ones == 0 || ones == z.len() {
        (ClassModel::Constant(if ones == 0 { 0.0 } else { 1.0 }), true)
    } else {
        let t: Vec<f64> = z.iter().map(|&v| f64::from(v)).collect();
        let s = match cfg.kind {
            LearnerKind::Logistic => Scorer::Linear(Linear::fit_logistic(
                x,
                &t,
                cfg.basis,
                cfg.iterations,
                cfg.learning_rate,
            )),
            LearnerKind::BoostedTrees => Scorer::Trees(Ensemble::fit(x, &t, Loss::Logistic, &cfg.boost())),
        };
        (ClassModel::Scored(s), false)
    };
    Ok(ProbClassifier {
        model,
        clip: cfg.probability_clip,
        dim: x.ncols(),
        single_class,
        config: cfg.clone(),
    })
}

/// Conditional-mean regressor minimizing squared error.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanRegressor {
    model: Scorer,
    dim: usize,
    config: LearnerConfig,
}

impl MeanRegressor {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        Ok(self.model.predict(x))
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.config
    }
}

pub fn fit_mean(x: ArrayView2<'_, f64>, y: &[f64], cfg: &LearnerConfig) -> Result<MeanRegressor> {
    cfg.validate()?;
    check_fit_shape(x, y.len())?;
    let model = match cfg.kind {
        LearnerKind::Logistic => Scorer::Linear(Linear::fit_least_squares(x, y, cfg.basis)),
        LearnerKind::BoostedTrees => Scorer::Trees(Ensemble::fit(x, y, Loss::Squared, &cfg.boost())),
    };
    Ok(MeanRegressor {
        model,
        dim: x.ncols(),
        config: cfg.clone(),
    })
}

/// Conditional-quantile regressor minimizing pinball loss at level `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileRegressor {
    model: Scorer,
    dim: usize,
    q: f64,
    config: LearnerConfig,
}

impl QuantileRegressor {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        Ok(self.model.predict(x))
    }

    pub fn level(&self) -> f64 {
        self.q
    }
}

pub fn fit_quantile(x: ArrayView2<'_, f64>, y: &[f64], q: f64, cfg: &LearnerConfig) -> Result<QuantileRegressor> {
    cfg.validate()?;
    check_fit_shape(x, y.len())?;
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!("quantile level {q} not in (0, 1)")));
    }
    let model = match cfg.kind {
        LearnerKind::Logistic => Scorer::Linear(Linear::fit_quantile(
            x,
            y,
            q,
            cfg.basis,
            cfg.iterations,
            cfg.learning_rate,
        )),
        LearnerKind::BoostedTrees => Scorer::Trees(Ensemble::fit(x, y, Loss::Pinball(q), &cfg.boost())),
    };
    Ok(QuantileRegressor {
        model,
        dim: x.ncols(),
        q,
        config: cfg.clone(),
    })
}

/// A lower/upper quantile pair whose predictions are repaired by pointwise
/// min/max when they cross.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileBand {
    pub lo: QuantileRegressor,
    pub hi: QuantileRegressor,
}

impl QuantileBand {
    pub fn fit(x: ArrayView2<'_, f64>, y: &[f64], q_lo: f64, q_hi: f64, cfg: &LearnerConfig) -> Result<Self> {
        Ok(Self {
            lo: fit_quantile(x, y, q_lo, cfg)?,
            hi: fit_quantile(x, y, q_hi, cfg)?,
        })
    }

    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        let a = self.lo.predict(x)?;
        let b = self.hi.predict(x)?;
        Ok((a.min(b), a.max(b)))
    }
}
