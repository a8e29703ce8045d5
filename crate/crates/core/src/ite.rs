//! Two-stage prediction intervals for individual treatment effects.
//!
//! Stage one splits the data in half. On the first half it fits the
//! propensity model and one score model per treatment arm. Each arm's model,
//! calibrated on that arm's rows of the second half, predicts the missing
//! potential outcome of every second-half unit in the *other* arm, weighted
//! by the propensity odds. Subtracting the observed outcome turns each
//! counterfactual set into an interval for that unit's effect.
//!
//! Stage two generalizes those per-unit intervals to new covariates.

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conformal::{CalibratedPredictor, ConformalConfig, ScoreKind, ScoreModel};
use crate::error::{Error, Result};
use crate::learners::{fit_classifier, fit_mean, fit_quantile, LearnerConfig, MeanRegressor, ProbClassifier, QuantileRegressor};
use crate::rng::derive_seed_str;
use crate::tabular::{split_random, Dataset};

/// Default clipping interval for estimated propensities.
pub const PROPENSITY_CLIP: f64 = 0.05;
/// Conditional quantile levels used by the inexact variant.
pub const INEXACT_LEVELS: (f64, f64) = (0.40, 0.60);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Exact,
    Naive,
    Inexact,
    X,
}

impl Variant {
    /// Exact and naive carry a finite-sample coverage guarantee.
    pub fn guaranteed(self) -> bool {
        matches!(self, Variant::Exact | Variant::Naive)
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::Exact => "Exact",
            Variant::Naive => "Naive",
            Variant::Inexact => "Inexact",
            Variant::X => "X",
        }
    }
}

pub fn method_label(score: ScoreKind, variant: Variant) -> String {
    let s = match score {
        ScoreKind::Cd => "CD",
        ScoreKind::Cqr => "WCP",
    };
    format!("{s}-{}", variant.label())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ItePipelineConfig {
    /// Overall miscoverage target.
    pub alpha: f64,
    pub score: ScoreKind,
    pub variant: Variant,
    pub conformal: ConformalConfig,
    pub propensity_clip: f64,
    /// Stage-one level for the inexact and X variants; `None` spends the
    /// whole `alpha` there.
    pub heuristic_alpha1: Option<f64>,
}

impl Default for ItePipelineConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            score: ScoreKind::Cd,
            variant: Variant::Exact,
            conformal: ConformalConfig::default(),
            propensity_clip: PROPENSITY_CLIP,
            heuristic_alpha1: None,
        }
    }
}

/// Miscoverage spent in each stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budget {
    pub alpha1: f64,
    /// Stage-two level; only the exact variant runs a second conformal step.
    pub alpha2: Option<f64>,
}

impl ItePipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| v > 0.0 && v < 1.0;
        if !in_unit(self.alpha) {
            return Err(Error::InvalidArgument(format!("alpha {} not in (0, 1)", self.alpha)));
        }
        if let Some(a1) = self.heuristic_alpha1 {
            if !in_unit(a1) {
                return Err(Error::InvalidArgument(format!("heuristic_alpha1 {a1} not in (0, 1)")));
            }
        }
        if !(self.propensity_clip > 0.0 && self.propensity_clip < 0.5) {
            return Err(Error::InvalidArgument("propensity_clip must lie in (0, 0.5)".into()));
        }
        self.conformal.learner.validate()
    }

    /// Exact and naive split `alpha` evenly between the stages; the
    /// heuristic variants spend it in stage one.
    pub fn budget(&self) -> Budget {
        match self.variant {
            Variant::Exact => Budget {
                alpha1: self.alpha / 2.0,
                alpha2: Some(self.alpha / 2.0),
            },
            Variant::Naive => Budget {
                alpha1: self.alpha / 2.0,
                alpha2: Some(self.alpha / 2.0),
            },
            Variant::Inexact | Variant::X => Budget {
                alpha1: self.heuristic_alpha1.unwrap_or(self.alpha),
                alpha2: None,
            },
        }
    }
}

/// Estimated `P(A = 1 | x)`, clipped away from 0 and 1.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityModel {
    classifier: ProbClassifier,
}

impl PropensityModel {
    pub fn from_classifier(classifier: ProbClassifier) -> Self {
        Self { classifier }
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        self.classifier.predict_proba(x)
    }

    pub fn classifier(&self) -> &ProbClassifier {
        &self.classifier
    }
}

pub fn estimate_propensity(ds: &Dataset, cfg: &LearnerConfig, clip: f64) -> Result<PropensityModel> {
    let a = ds.require_treatment()?;
    let treated = a.iter().filter(|&&v| v == 1).count();
    if treated == 0 || treated == a.len() {
        return Err(Error::Degenerate("propensity needs both treatment arms".into()));
    }
    let classifier = fit_classifier(ds.features(), a, cfg)?.with_clip(clip);
    Ok(PropensityModel { classifier })
}

/// Direction of the covariate shift handled by a stage-one arm model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Treated rows train; control units are the targets.
    TreatedToControl,
    /// Control rows train; treated units are the targets.
    ControlToTreated,
}

/// Propensity-odds weight for the given shift direction.
pub fn counterfactual_weight(pi_hat: f64, direction: Direction) -> f64 {
    match direction {
        Direction::TreatedToControl => (1.0 - pi_hat) / pi_hat,
        Direction::ControlToTreated => pi_hat / (1.0 - pi_hat),
    }
}

/// Weight shifting one arm's covariates to the whole population:
/// `1 / π` for the treated arm, `1 / (1 - π)` for the control arm.
pub fn population_weight(pi_hat: f64, arm: u8) -> f64 {
    if arm == 1 {
        1.0 / pi_hat
    } else {
        1.0 / (1.0 - pi_hat)
    }
}

/// Treated units: `[Y(1) - max C, Y(1) - min C]`, where `C` covers Y(0).
pub fn ite_interval_treated(y1: f64, hull: (f64, f64)) -> (f64, f64) {
    (y1 - hull.1, y1 - hull.0)
}

/// Control units: `[min C - Y(0), max C - Y(0)]`, where `C` covers Y(1).
pub fn ite_interval_control(y0: f64, hull: (f64, f64)) -> (f64, f64) {
    (hull.0 - y0, hull.1 - y0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOneRow {
    pub x: Vec<f64>,
    pub c_lo: f64,
    pub c_hi: f64,
    pub a: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOneOutput {
    pub rows: Vec<StageOneRow>,
    pub alpha1: f64,
}

impl StageOneOutput {
    fn features(&self, rows: &[usize]) -> Result<Array2<f64>> {
        let d = self.rows.first().map_or(0, |r| r.x.len());
        let flat: Vec<f64> = rows.iter().flat_map(|&i| self.rows[i].x.iter().copied()).collect();
        Array2::from_shape_vec((rows.len(), d), flat).map_err(|e| Error::Shape(e.to_string()))
    }

    fn column(&self, rows: &[usize], f: impl Fn(&StageOneRow) -> f64) -> Vec<f64> {
        rows.iter().map(|&i| f(&self.rows[i])).collect()
    }
}

/// Stage-one models: propensity plus one calibrated-ready score model per arm.
#[derive(Debug, Clone)]
pub struct CounterfactualFit {
    pub propensity: PropensityModel,
    treated: ScoreModel,
    control: ScoreModel,
    /// second-half rows, used for calibration and as stage-one targets
    holdout: Dataset,
    holdout_pi: Vec<f64>,
    pub alpha1: f64,
    mass: crate::conformal::MassPlacement,
}

fn arm_rows(a: &[u8], arm: u8) -> Vec<usize> {
    a.iter().enumerate().filter(|(_, &v)| v == arm).map(|(i, _)| i).collect()
}

/// Splits `ds`, fits the propensity and both arm score models on the first
/// half, and keeps the second half for calibration.
pub fn fit_counterfactual(ds: &Dataset, cfg: &ItePipelineConfig, alpha1: f64, seed: u64) -> Result<CounterfactualFit> {
    ds.require_treatment()?;
    ds.require_outcome()?;
    let split = split_random(ds.n(), &[0.5, 0.5], derive_seed_str(seed, "split"))?;
    let fit_half = ds.subset(&split.parts[0])?;
    let holdout = ds.subset(&split.parts[1])?;
    for (name, half) in [("first", &fit_half), ("second", &holdout)] {
        let a = half.require_treatment()?;
        for arm in [0u8, 1] {
            if !a.contains(&arm) {
                return Err(Error::Degenerate(format!(
                    "arm {arm} is empty in the {name} half"
                )));
            }
        }
    }

    let propensity = estimate_propensity(&fit_half, &cfg.conformal.learner, cfg.propensity_clip)?;
    let fit_a = fit_half.require_treatment()?;
    let fit_arm = |arm: u8, label: &str| -> Result<ScoreModel> {
        let sub = fit_half.subset(&arm_rows(fit_a, arm))?;
        ScoreModel::fit(
            cfg.score,
            sub.features(),
            sub.require_outcome()?,
            alpha1,
            &cfg.conformal,
            derive_seed_str(seed, label),
        )
    };
    let treated = fit_arm(1, "arm-treated")?;
    let control = fit_arm(0, "arm-control")?;
    let holdout_pi = holdout
        .features()
        .rows()
        .into_iter()
        .map(|r| propensity.predict(&r.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Ok(CounterfactualFit {
        propensity,
        treated,
        control,
        holdout,
        holdout_pi,
        alpha1,
        mass: cfg.conformal.mass,
    })
}

impl CounterfactualFit {
    /// Score model of `arm` calibrated on that arm's held-out rows, with
    /// calibration weights `weight(π̂(X_i))`.
    pub fn arm_predictor(&self, arm: u8, weight: impl Fn(f64) -> f64) -> Result<CalibratedPredictor<'_>> {
        let a = self.holdout.require_treatment()?;
        let rows = arm_rows(a, arm);
        let sub = self.holdout.subset(&rows)?;
        let w: Vec<f64> = rows.iter().map(|&i| weight(self.holdout_pi[i])).collect();
        let model = if arm == 1 { &self.treated } else { &self.control };
        model.calibrate(sub.features(), sub.require_outcome()?, &w, self.alpha1, self.mass)
    }

    pub fn holdout(&self) -> &Dataset {
        &self.holdout
    }

    /// Effect intervals for every held-out unit, in held-out row order.
    pub fn stage_one_output(&self) -> Result<StageOneOutput> {
        let to_control = self.arm_predictor(1, |p| counterfactual_weight(p, Direction::TreatedToControl))?;
        let to_treated = self.arm_predictor(0, |p| counterfactual_weight(p, Direction::ControlToTreated))?;
        let a = self.holdout.require_treatment()?;
        let y = self.holdout.require_outcome()?;
        let rows = (0..self.holdout.n())
            .into_par_iter()
            .map(|i| {
                let x = self.holdout.row(i).to_vec();
                let pi = self.holdout_pi[i];
                let (c_lo, c_hi, hull) = if a[i] == 1 {
                    let hull = to_treated
                        .predict(&x, counterfactual_weight(pi, Direction::ControlToTreated))?
                        .hull();
                    let (lo, hi) = ite_interval_treated(y[i], hull);
                    (lo, hi, hull)
                } else {
                    let hull = to_control
                        .predict(&x, counterfactual_weight(pi, Direction::TreatedToControl))?
                        .hull();
                    let (lo, hi) = ite_interval_control(y[i], hull);
                    (lo, hi, hull)
                };
                let (w_src, w_out) = (hull.1 - hull.0, c_hi - c_lo);
                debug_assert!((w_src - w_out).abs() <= 1e-9 * (1.0 + y[i].abs() + w_src.abs()));
                Ok(StageOneRow { x, c_lo, c_hi, a: a[i] })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(StageOneOutput {
            rows,
            alpha1: self.alpha1,
        })
    }
}

/// Stage one at the configured level; see [`fit_counterfactual`].
pub fn stage_one(ds: &Dataset, cfg: &ItePipelineConfig, seed: u64) -> Result<StageOneOutput> {
    cfg.validate()?;
    fit_counterfactual(ds, cfg, cfg.budget().alpha1, seed)?.stage_one_output()
}

/// `ceil((1 - gamma)(m + 1))`-th smallest score. Returns the largest score
/// and `saturated = true` when that index exceeds `m`.
pub fn split_conformal_quantile(scores: &[f64], gamma: f64) -> Result<(f64, bool)> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("no calibration scores".into()));
    }
    let mut s = scores.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len();
    // a product that is an integer in exact arithmetic must not round up
    let k = ((1.0 - gamma) * (m + 1) as f64 * (1.0 - 1e-12)).ceil() as usize;
    if k > m {
        Ok((s[m - 1], true))
    } else {
        Ok((s[k.max(1) - 1], false))
    }
}

fn collapse(lo: f64, hi: f64) -> (f64, f64) {
    if lo <= hi {
        (lo, hi)
    } else {
        let mid = 0.5 * (lo + hi);
        (mid, mid)
    }
}

/// Secondary split-conformal fit over the stage-one intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct StageTwoExactFit {
    pub tau_lo: MeanRegressor,
    pub tau_hi: MeanRegressor,
    pub eta: f64,
    pub gamma: f64,
    /// The finite-sample index ran past the calibration set and the largest
    /// score was used instead.
    pub saturated: bool,
}

pub fn stage_two_exact(s1: &StageOneOutput, gamma: f64, cfg: &ItePipelineConfig, seed: u64) -> Result<StageTwoExactFit> {
    if s1.rows.len() < 2 {
        return Err(Error::InvalidArgument("stage two needs at least 2 rows".into()));
    }
    let split = split_random(s1.rows.len(), &[0.5, 0.5], derive_seed_str(seed, "exact-split"))?;
    let (tr, ca) = (&split.parts[0], &split.parts[1]);
    let x_tr = s1.features(tr)?;
    let learner = &cfg.conformal.learner;
    let (tau_lo, tau_hi) = if tr.len() >= 2 {
        (
            fit_mean(x_tr.view(), &s1.column(tr, |r| r.c_lo), learner)?,
            fit_mean(x_tr.view(), &s1.column(tr, |r| r.c_hi), learner)?,
        )
    } else {
        return Err(Error::InvalidArgument("stage two training half too small".into()));
    };
    let scores = ca
        .iter()
        .map(|&i| {
            let r = &s1.rows[i];
            Ok((tau_lo.predict(&r.x)? - r.c_lo).max(r.c_hi - tau_hi.predict(&r.x)?))
        })
        .collect::<Result<Vec<f64>>>()?;
    let (eta, saturated) = split_conformal_quantile(&scores, gamma)?;
    Ok(StageTwoExactFit {
        tau_lo,
        tau_hi,
        eta: eta.max(0.0),
        gamma,
        saturated,
    })
}

/// `[τ̂_L(x) - η, τ̂_U(x) + η]`, collapsed to its midpoint if it crosses.
pub fn predict_exact(fit: &StageTwoExactFit, x: &[f64]) -> Result<(f64, f64)> {
    Ok(collapse(fit.tau_lo.predict(x)? - fit.eta, fit.tau_hi.predict(x)? + fit.eta))
}

/// Bonferroni interval difference `[min C¹ - max C⁰, max C¹ - min C⁰]`.
pub fn stage_two_naive(c1: (f64, f64), c0: (f64, f64)) -> (f64, f64) {
    (c1.0 - c0.1, c1.1 - c0.0)
}

/// Conditional 40% quantile of the lower endpoints and 60% quantile of the
/// upper endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct InexactFit {
    pub lo: QuantileRegressor,
    pub hi: QuantileRegressor,
}

impl InexactFit {
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        Ok(collapse(self.lo.predict(x)?, self.hi.predict(x)?))
    }
}

pub fn stage_two_inexact(s1: &StageOneOutput, cfg: &ItePipelineConfig) -> Result<InexactFit> {
    if s1.rows.is_empty() {
        return Err(Error::InvalidArgument("empty stage-one output".into()));
    }
    let all: Vec<usize> = (0..s1.rows.len()).collect();
    let x = s1.features(&all)?;
    let learner = &cfg.conformal.learner;
    Ok(InexactFit {
        lo: fit_quantile(x.view(), &s1.column(&all, |r| r.c_lo), INEXACT_LEVELS.0, learner)?,
        hi: fit_quantile(x.view(), &s1.column(&all, |r| r.c_hi), INEXACT_LEVELS.1, learner)?,
    })
}

/// `b + π (a - b)`, kept inside the closed span of `a` and `b`.
pub fn mix(pi: f64, a: f64, b: f64) -> f64 {
    (b + pi * (a - b)).clamp(a.min(b), a.max(b))
}

/// Propensity-mixed per-arm endpoint means.
#[derive(Debug, Clone, PartialEq)]
pub struct CdxFit {
    pub c_lo_0: MeanRegressor,
    pub c_hi_0: MeanRegressor,
    pub c_lo_1: MeanRegressor,
    pub c_hi_1: MeanRegressor,
    pub propensity: PropensityModel,
}

/// Mixes per-arm endpoint predictions `(lo1, hi1)` and `(lo0, hi0)` with
/// weight `pi` on the treated arm.
pub fn cdx_combine(pi: f64, arm1: (f64, f64), arm0: (f64, f64)) -> (f64, f64) {
    let arm1 = collapse(arm1.0, arm1.1);
    let arm0 = collapse(arm0.0, arm0.1);
    (mix(pi, arm1.0, arm0.0), mix(pi, arm1.1, arm0.1))
}

impl CdxFit {
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        let pi = self.propensity.predict(x)?;
        let arm1 = (self.c_lo_1.predict(x)?, self.c_hi_1.predict(x)?);
        let arm0 = (self.c_lo_0.predict(x)?, self.c_hi_0.predict(x)?);
        Ok(cdx_combine(pi, arm1, arm0))
    }
}

pub fn stage_two_cdx(s1: &StageOneOutput, propensity: &PropensityModel, cfg: &ItePipelineConfig) -> Result<CdxFit> {
    let learner = &cfg.conformal.learner;
    let fit_arm = |arm: u8| -> Result<(MeanRegressor, MeanRegressor)> {
        let rows: Vec<usize> = (0..s1.rows.len()).filter(|&i| s1.rows[i].a == arm).collect();
        if rows.len() < 2 {
            return Err(Error::Degenerate(format!("arm {arm} has fewer than 2 stage-one rows")));
        }
        let x = s1.features(&rows)?;
        Ok((
            fit_mean(x.view(), &s1.column(&rows, |r| r.c_lo), learner)?,
            fit_mean(x.view(), &s1.column(&rows, |r| r.c_hi), learner)?,
        ))
    };
    let (c_lo_0, c_hi_0) = fit_arm(0)?;
    let (c_lo_1, c_hi_1) = fit_arm(1)?;
    Ok(CdxFit {
        c_lo_0,
        c_hi_0,
        c_lo_1,
        c_hi_1,
        propensity: propensity.clone(),
    })
}

fn predict_batch<F>(x_test: ArrayView2<'_, f64>, f: F) -> Result<Vec<(f64, f64)>>
where
    F: Fn(&[f64]) -> Result<(f64, f64)> + Sync,
{
    let rows: Vec<Vec<f64>> = x_test.axis_iter(Axis(0)).map(|r| r.to_vec()).collect();
    rows.par_iter().map(|x| f(x)).collect()
}

/// Stage-one seed used by [`run_pipeline`] for a given root seed.
pub fn stage_one_seed(seed: u64) -> u64 {
    derive_seed_str(seed, "stage-one")
}

/// Finishes a pipeline from an already fitted stage one. `s1` caches the
/// stage-one intervals so variants sharing a fit compute them once.
pub fn run_variant(
    cf: &CounterfactualFit,
    s1: &mut Option<StageOneOutput>,
    cfg: &ItePipelineConfig,
    x_test: ArrayView2<'_, f64>,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    cfg.validate()?;
    if x_test.ncols() != cf.holdout().d() {
        return Err(Error::Shape(format!(
            "test rows have {} features, training data has {}",
            x_test.ncols(),
            cf.holdout().d()
        )));
    }
    let budget = cfg.budget();
    if budget.alpha1 != cf.alpha1 {
        return Err(Error::InvalidArgument(format!(
            "stage one was fitted at level {} but the variant needs {}",
            cf.alpha1, budget.alpha1
        )));
    }
    let s2_seed = derive_seed_str(seed, "stage-two");
    if cfg.variant == Variant::Naive {
        let treated = cf.arm_predictor(1, |p| population_weight(p, 1))?;
        let control = cf.arm_predictor(0, |p| population_weight(p, 0))?;
        return predict_batch(x_test, |x| {
            let pi = cf.propensity.predict(x)?;
            let c1 = treated.predict(x, population_weight(pi, 1))?.hull();
            let c0 = control.predict(x, population_weight(pi, 0))?.hull();
            Ok(stage_two_naive(c1, c0))
        });
    }
    if s1.is_none() {
        *s1 = Some(cf.stage_one_output()?);
    }
    let s1 = s1.as_ref().expect("stage one computed above");
    match cfg.variant {
        Variant::Exact => {
            let fit = stage_two_exact(s1, budget.alpha2.unwrap_or(budget.alpha1), cfg, s2_seed)?;
            predict_batch(x_test, |x| predict_exact(&fit, x))
        }
        Variant::Inexact => {
            let fit = stage_two_inexact(s1, cfg)?;
            predict_batch(x_test, |x| fit.predict(x))
        }
        Variant::X => {
            let fit = stage_two_cdx(s1, &cf.propensity, cfg)?;
            predict_batch(x_test, |x| fit.predict(x))
        }
        Variant::Naive => unreachable!("handled above"),
    }
}

/// End-to-end ITE intervals for each row of `x_test`.
pub fn run_pipeline(ds: &Dataset, cfg: &ItePipelineConfig, x_test: ArrayView2<'_, f64>, seed: u64) -> Result<Vec<(f64, f64)>> {
    cfg.validate()?;
    if x_test.ncols() != ds.d() {
        return Err(Error::Shape(format!(
            "test rows have {} features, training data has {}",
            x_test.ncols(),
            ds.d()
        )));
    }
    let cf = fit_counterfactual(ds, cfg, cfg.budget().alpha1, stage_one_seed(seed))?;
    run_variant(&cf, &mut None, cfg, x_test, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn weight_examples() {
        assert_eq!(counterfactual_weight(0.5, Direction::TreatedToControl), 1.0);
        assert_eq!(counterfactual_weight(0.5, Direction::ControlToTreated), 1.0);
        assert_eq!(counterfactual_weight(0.25, Direction::TreatedToControl), 3.0);
        assert_eq!(population_weight(0.25, 1), 4.0);
        assert_eq!(population_weight(0.75, 0), 4.0);
    }

    #[test]
    fn transform_examples() {
        assert_eq!(ite_interval_treated(2.0, (-1.0, 1.0)), (1.0, 3.0));
        assert_eq!(ite_interval_control(1.0, (0.0, 4.0)), (-1.0, 3.0));
    }

    #[test]
    fn naive_examples() {
        assert_eq!(stage_two_naive((1.0, 3.0), (0.0, 1.0)), (0.0, 3.0));
        assert_eq!(stage_two_naive((-0.5, 2.0), (-0.5, 2.0)), (-2.5, 2.5));
        assert_eq!(stage_two_naive((1.0, 3.0), (0.5, 0.5)), (0.5, 2.5));
    }

    #[test]
    fn cdx_examples() {
        assert_eq!(cdx_combine(1.0, (1.0, 2.0), (5.0, 9.0)), (1.0, 2.0));
        assert_eq!(cdx_combine(0.5, (0.0, 2.0), (2.0, 4.0)), (1.0, 3.0));
    }

    #[test]
    fn exact_quantile_examples() {
        // brute-force oracle: smallest s with #{V <= s} >= (1-γ)(m+1)
        let scores = [-1.0, 0.0, 2.0, 5.0];
        let gamma = 0.25;
        let need = (1.0 - gamma) * (scores.len() + 1) as f64;
        let brute = scores
            .iter()
            .copied()
            .filter(|&s| scores.iter().filter(|&&v| v <= s).count() as f64 >= need)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(split_conformal_quantile(&scores, gamma).unwrap(), (brute, false));
        // γ(m+1) < 1: widest case
        let (eta, sat) = split_conformal_quantile(&scores, 0.1).unwrap();
        assert!(sat && scores.iter().all(|&v| eta >= v));
    }

    #[test]
    fn budget_accounting() {
        let mut cfg = ItePipelineConfig::default();
        for v in [Variant::Exact, Variant::Naive] {
            cfg.variant = v;
            let b = cfg.budget();
            assert_eq!(b.alpha1 + b.alpha2.unwrap(), cfg.alpha);
            assert_eq!(b.alpha1, b.alpha2.unwrap());
        }
        cfg.variant = Variant::X;
        assert_eq!(cfg.budget().alpha1, cfg.alpha);
        cfg.heuristic_alpha1 = Some(0.05);
        assert_eq!(cfg.budget().alpha1, 0.05);
    }

    proptest! {
        #[test]
        fn transforms_preserve_width(y in -50.0f64..50.0, lo in -50.0f64..50.0, w in 0.0f64..20.0) {
            let hull = (lo, lo + w);
            let width = hull.1 - hull.0;
            for (a, b) in [ite_interval_treated(y, hull), ite_interval_control(y, hull)] {
                prop_assert!(((b - a) - width).abs() <= 4.0 * f64::EPSILON * (y.abs() + lo.abs() + w));
            }
        }

        #[test]
        fn mixing_stays_in_span(pi in 0.0f64..=1.0, a in -1e3f64..1e3, b in -1e3f64..1e3) {
            let m = mix(pi, a, b);
            prop_assert!(a.min(b) <= m && m <= a.max(b));
        }

        #[test]
        fn weights_reciprocal(pi in 0.01f64..0.99) {
            let p = counterfactual_weight(pi, Direction::TreatedToControl)
                * counterfactual_weight(pi, Direction::ControlToTreated);
            prop_assert!((p - 1.0).abs() <= 4.0 * f64::EPSILON);
        }
    }
}
