//! Weighted split-conformal machinery.
//!
//! Density scores are *conformity* scores: high means typical. The cutoff is
//! the `alpha`-quantile of the weighted calibration scores with the test
//! point's own weight parked at `-inf` (see [`MassPlacement`]), and the
//! prediction set is the superlevel set `{y : f̂(y | x) >= t}` evaluated on a
//! uniform grid. CQR scores use the usual nonconformity orientation: the
//! `1 - alpha` quantile with the test mass at `+inf`.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::density::{fit_conditional_density, make_reference, ConditionalDensity, ConditionalDensityModel, DEFAULT_INFLATION};
use crate::error::{Error, Result};
use crate::learners::{LearnerConfig, QuantileBand};
use crate::stats::sample_sd;
use crate::tabular::Dataset;

/// Where the test point's normalized weight sits when thresholding
/// conformity scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MassPlacement {
    /// Lower tail; yields the finite-sample guarantee for conformity scores.
    #[default]
    NegInfinity,
    /// Literal `+inf` placement, kept for comparison.
    PosInfinity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    /// Conditional-density conformity score.
    Cd,
    /// Conformalized-quantile-regression nonconformity score.
    Cqr,
}

/// Score-model and grid settings shared by every conformal step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConformalConfig {
    pub learner: LearnerConfig,
    /// Reference sd inflation for the density estimator.
    pub inflation: f64,
    pub grid_points: usize,
    /// Grid padding beyond the training outcome range, in outcome sds.
    pub grid_pad_sd: f64,
    pub mass: MassPlacement,
}

impl Default for ConformalConfig {
    fn default() -> Self {
        Self {
            learner: LearnerConfig::default(),
            inflation: DEFAULT_INFLATION,
            grid_points: 1024,
            grid_pad_sd: 4.0,
            mass: MassPlacement::NegInfinity,
        }
    }
}

/// Returns `w_i / (Σw + w_test)` and `w_test / (Σw + w_test)`.
pub fn normalize_weights(w: &[f64], w_test: f64) -> Result<(Vec<f64>, f64)> {
    check_weights(w, w_test)?;
    let total = w.iter().sum::<f64>() + w_test;
    Ok((w.iter().map(|v| v / total).collect(), w_test / total))
}

fn check_weights(w: &[f64], w_test: f64) -> Result<()> {
    if let Some(bad) = w.iter().chain(std::iter::once(&w_test)).find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument(format!(
            "weights must be positive and finite, got {bad}"
        )));
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} not in (0, 1)")));
    }
    Ok(())
}

/// Calibration scores with their weights and the test point's weight.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedCalibration {
    pub scores: Vec<f64>,
    pub weights: Vec<f64>,
    pub test_weight: f64,
}

impl WeightedCalibration {
    pub fn new(scores: Vec<f64>, weights: Vec<f64>, test_weight: f64) -> Result<Self> {
        if scores.len() != weights.len() {
            return Err(Error::Shape(format!(
                "{} scores but {} weights",
                scores.len(),
                weights.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument("scores must be finite".into()));
        }
        check_weights(&weights, test_weight)?;
        Ok(Self {
            scores,
            weights,
            test_weight,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConformalThreshold {
    /// May be `-inf` (accept everything) or, under `PosInfinity`, `+inf`.
    pub t_alpha: f64,
    pub alpha: f64,
}

/// Cumulative weight within this fraction of the total counts as reaching a
/// target, so exact ties survive summation rounding (equal weights, for
/// example, reproduce the unweighted counting rule).
const TIE_TOL: f64 = 1e-12;

/// Scores sorted ascending (stable in input order) with running weight sums,
/// so each test weight is thresholded by one binary search.
#[derive(Debug, Clone, PartialEq)]
pub struct SortedCalibration {
    scores: Vec<f64>,
    cum: Vec<f64>,
    total: f64,
}

impl SortedCalibration {
    pub fn new(scores: &[f64], weights: &[f64]) -> Result<Self> {
        if scores.len() != weights.len() {
            return Err(Error::Shape(format!(
                "{} scores but {} weights",
                scores.len(),
                weights.len()
            )));
        }
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
        let mut acc = 0.0;
        let cum: Vec<f64> = order
            .iter()
            .map(|&i| {
                acc += weights[i];
                acc
            })
            .collect();
        Ok(Self {
            scores: order.iter().map(|&i| scores[i]).collect(),
            cum,
            total: acc,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Conformity cutoff: the smallest `t` in `{-inf} ∪ scores` whose
    /// cumulative normalized weight reaches `alpha`.
    pub fn lower_threshold(&self, test_weight: f64, alpha: f64, mass: MassPlacement) -> f64 {
        let total = self.total + test_weight;
        let target = alpha * total - TIE_TOL * total;
        match mass {
            MassPlacement::NegInfinity => {
                if test_weight >= target {
                    return f64::NEG_INFINITY;
                }
                let k = self.cum.partition_point(|c| test_weight + c < target);
                self.scores[k]
            }
            MassPlacement::PosInfinity => {
                let k = self.cum.partition_point(|c| *c < target);
                self.scores.get(k).copied().unwrap_or(f64::INFINITY)
            }
        }
    }

    /// Nonconformity cutoff: the `1 - alpha` quantile with the test mass at
    /// `+inf`; `+inf` when the calibration weight alone cannot reach it.
    pub fn upper_threshold(&self, test_weight: f64, alpha: f64) -> f64 {
        let total = self.total + test_weight;
        let target = (1.0 - alpha) * total - TIE_TOL * total;
        let k = self.cum.partition_point(|c| *c < target);
        self.scores.get(k).copied().unwrap_or(f64::INFINITY)
    }
}

/// `alpha`-quantile of `Σ p_i δ_{V_i} + p_test δ_{-inf}`.
pub fn weighted_quantile_with_mass(cal: &WeightedCalibration, alpha: f64) -> Result<ConformalThreshold> {
    weighted_quantile_with_mass_at(cal, alpha, MassPlacement::NegInfinity)
}

pub fn weighted_quantile_with_mass_at(
    cal: &WeightedCalibration,
    alpha: f64,
    mass: MassPlacement,
) -> Result<ConformalThreshold> {
    check_alpha(alpha)?;
    let sorted = SortedCalibration::new(&cal.scores, &cal.weights)?;
    Ok(ConformalThreshold {
        t_alpha: sorted.lower_threshold(cal.test_weight, alpha, mass),
        alpha,
    })
}

/// Uniform grid `lo + k (hi - lo) / (points - 1)`, `k = 0..points`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl GridSpec {
    pub fn new(lo: f64, hi: f64, points: usize) -> Result<Self> {
        if points < 2 || !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "invalid grid [{lo}, {hi}] with {points} points"
            )));
        }
        Ok(Self { lo, hi, points })
    }

    /// `[min(y) - pad * sd(y), max(y) + pad * sd(y)]`.
    pub fn covering(y: &[f64], pad_sd: f64, points: usize) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::InvalidArgument("grid needs outcomes".into()));
        }
        let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let pad = pad_sd * sample_sd(y).max(1e-6);
        Self::new(lo - pad, hi + pad, points)
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.points - 1) as f64
    }

    pub fn values(&self) -> Vec<f64> {
        let step = self.step();
        (0..self.points)
            .map(|k| if k + 1 == self.points { self.hi } else { self.lo + k as f64 * step })
            .collect()
    }
}

/// Sorted, disjoint closed intervals together with the grid that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalSet {
    intervals: Vec<(f64, f64)>,
    grid: GridSpec,
}

impl IntervalSet {
    pub fn new(mut intervals: Vec<(f64, f64)>, grid: GridSpec) -> Result<Self> {
        if intervals.is_empty() {
            return Err(Error::InvalidArgument("interval set must be non-empty".into()));
        }
        intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in intervals.windows(2) {
            if w[0].1 >= w[1].0 {
                return Err(Error::InvalidArgument("intervals overlap".into()));
            }
        }
        if intervals.iter().any(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidArgument("interval with lo > hi".into()));
        }
        Ok(Self { intervals, grid })
    }

    pub fn whole_grid(grid: GridSpec) -> Self {
        Self {
            intervals: vec![(grid.lo, grid.hi)],
            grid,
        }
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn hull(&self) -> (f64, f64) {
        (self.intervals[0].0, self.intervals[self.intervals.len() - 1].1)
    }

    pub fn contains(&self, y: f64) -> bool {
        self.intervals.iter().any(|&(l, u)| l <= y && y <= u)
    }
}

/// Maximal runs of grid points whose value is at least `t`. An empty
/// superlevel set becomes a one-step interval centred on the first argmax.
pub fn superlevel_from_values(values: &[f64], grid: GridSpec, t: f64) -> IntervalSet {
    if t == f64::NEG_INFINITY {
        return IntervalSet::whole_grid(grid);
    }
    let ys = grid.values();
    let mut intervals = Vec::new();
    let mut start: Option<usize> = None;
    for (k, &v) in values.iter().enumerate() {
        match (v >= t, start) {
            (true, None) => start = Some(k),
            (false, Some(s)) => {
                intervals.push((ys[s], ys[k - 1]));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        intervals.push((ys[s], ys[values.len() - 1]));
    }
    if intervals.is_empty() {
        let arg = values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best })
            .0;
        let half = 0.5 * grid.step();
        intervals.push((ys[arg] - half, ys[arg] + half));
    }
    IntervalSet { intervals, grid }
}

/// `{y : f̂(y | x) >= t}` evaluated on `grid`.
pub fn density_superlevel_set<D: ConditionalDensity + ?Sized>(
    model: &D,
    x: &[f64],
    t: &ConformalThreshold,
    grid: GridSpec,
) -> Result<IntervalSet> {
    if t.t_alpha == f64::NEG_INFINITY {
        return Ok(IntervalSet::whole_grid(grid));
    }
    let values = model.density_on_grid(x, &grid.values())?;
    Ok(superlevel_from_values(&values, grid, t.t_alpha))
}

/// `max(q_lo - y, y - q_hi)`; negative inside the band.
pub fn cqr_score(q_lo: f64, q_hi: f64, y: f64) -> f64 {
    (q_lo - y).max(y - q_hi)
}

/// A fitted score function together with the outcome grid used for sets.
#[derive(Debug, Clone, PartialEq)]
pub enum ScoreModel {
    Density { model: ConditionalDensityModel, grid: GridSpec },
    Quantile { band: QuantileBand, grid: GridSpec },
}

impl ScoreModel {
    /// Fits the score model on `(x, y)`. For CQR the band is fitted at
    /// levels `alpha / 2` and `1 - alpha / 2`.
    pub fn fit(
        kind: ScoreKind,
        x: ArrayView2<'_, f64>,
        y: &[f64],
        alpha: f64,
        cfg: &ConformalConfig,
        seed: u64,
    ) -> Result<Self> {
        check_alpha(alpha)?;
        let grid = GridSpec::covering(y, cfg.grid_pad_sd, cfg.grid_points)?;
        Ok(match kind {
            ScoreKind::Cd => {
                let reference = make_reference(y, cfg.inflation)?;
                let model = fit_conditional_density(x, y, &reference, &cfg.learner, seed)?;
                ScoreModel::Density { model, grid }
            }
            ScoreKind::Cqr => ScoreModel::Quantile {
                band: QuantileBand::fit(x, y, alpha / 2.0, 1.0 - alpha / 2.0, &cfg.learner)?,
                grid,
            },
        })
    }

    pub fn kind(&self) -> ScoreKind {
        match self {
            ScoreModel::Density { .. } => ScoreKind::Cd,
            ScoreModel::Quantile { .. } => ScoreKind::Cqr,
        }
    }

    pub fn grid(&self) -> GridSpec {
        match self {
            ScoreModel::Density { grid, .. } | ScoreModel::Quantile { grid, .. } => *grid,
        }
    }

    /// Conformity score for density models, nonconformity score for CQR.
    pub fn score(&self, x: &[f64], y: f64) -> Result<f64> {
        match self {
            ScoreModel::Density { model, .. } => model.eval_density(x, y),
            ScoreModel::Quantile { band, .. } => {
                let (lo, hi) = band.predict(x)?;
                Ok(cqr_score(lo, hi, y))
            }
        }
    }

    pub fn calibrate(&self, x: ArrayView2<'_, f64>, y: &[f64], weights: &[f64], alpha: f64, mass: MassPlacement) -> Result<CalibratedPredictor<'_>> {
        check_alpha(alpha)?;
        if x.nrows() != y.len() {
            return Err(Error::Shape("calibration rows and outcomes differ".into()));
        }
        check_weights(weights, 1.0)?;
        let scores = x
            .rows()
            .into_iter()
            .zip(y)
            .map(|(r, &yi)| self.score(r.as_slice().expect("standard layout"), yi))
            .collect::<Result<Vec<_>>>()?;
        Ok(CalibratedPredictor {
            model: self,
            calibration: SortedCalibration::new(&scores, weights)?,
            alpha,
            mass,
        })
    }
}

/// A score model bound to weighted calibration scores at level `alpha`.
#[derive(Debug, Clone)]
pub struct CalibratedPredictor<'a> {
    model: &'a ScoreModel,
    calibration: SortedCalibration,
    alpha: f64,
    mass: MassPlacement,
}

impl CalibratedPredictor<'_> {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Prediction set at `x` for a test point of weight `test_weight`.
    pub fn predict(&self, x: &[f64], test_weight: f64) -> Result<IntervalSet> {
        check_weights(&[], test_weight)?;
        match self.model {
            ScoreModel::Density { model, grid } => {
                let t = ConformalThreshold {
                    t_alpha: self.calibration.lower_threshold(test_weight, self.alpha, self.mass),
                    alpha: self.alpha,
                };
                density_superlevel_set(model, x, &t, *grid)
            }
            ScoreModel::Quantile { band, grid } => {
                let q = self.calibration.upper_threshold(test_weight, self.alpha);
                if q == f64::INFINITY {
                    return Ok(IntervalSet::whole_grid(*grid));
                }
                let (lo, hi) = band.predict(x)?;
                let (lo, hi) = (lo - q, hi + q);
                let iv = if lo <= hi {
                    (lo, hi)
                } else {
                    let mid = 0.5 * (lo + hi);
                    (mid, mid)
                };
                Ok(IntervalSet {
                    intervals: vec![iv],
                    grid: *grid,
                })
            }
        }
    }
}

fn weights_for(ds: &Dataset, weight_fn: &dyn Fn(&[f64]) -> f64) -> Vec<f64> {
    ds.features()
        .rows()
        .into_iter()
        .map(|r| weight_fn(&r.to_vec()))
        .collect()
}

fn split_conformal(
    kind: ScoreKind,
    train: &Dataset,
    calib: &Dataset,
    x_test: &[f64],
    alpha: f64,
    weight_fn: &dyn Fn(&[f64]) -> f64,
    cfg: &ConformalConfig,
    grid: Option<GridSpec>,
    seed: u64,
) -> Result<IntervalSet> {
    if train.n() == 0 || calib.n() == 0 {
        return Err(Error::InvalidArgument("train and calibration sets must be non-empty".into()));
    }
    let y_train = train.require_outcome()?;
    let mut model = ScoreModel::fit(kind, train.features(), y_train, alpha, cfg, seed)?;
    if let Some(g) = grid {
        match &mut model {
            ScoreModel::Density { grid, .. } | ScoreModel::Quantile { grid, .. } => *grid = g,
        }
    }
    let weights = weights_for(calib, weight_fn);
    let predictor = model.calibrate(calib.features(), calib.require_outcome()?, &weights, alpha, cfg.mass)?;
    predictor.predict(x_test, weight_fn(x_test))
}

/// Weighted split-conformal prediction set with density scores: fit the
/// conditional density on `train`, score `calib`, threshold with weights
/// from `weight_fn`, and return the superlevel set at `x_test`.
#[allow(clippy::too_many_arguments)]
pub fn wcp_interval_cd(
    train: &Dataset,
    calib: &Dataset,
    x_test: &[f64],
    alpha: f64,
    weight_fn: &dyn Fn(&[f64]) -> f64,
    cfg: &ConformalConfig,
    grid: Option<GridSpec>,
    seed: u64,
) -> Result<IntervalSet> {
    split_conformal(ScoreKind::Cd, train, calib, x_test, alpha, weight_fn, cfg, grid, seed)
}

/// Weighted split-conformal interval with CQR scores. A `+inf` cutoff is
/// reported as the whole grid.
pub fn wcp_interval_cqr(
    train: &Dataset,
    calib: &Dataset,
    x_test: &[f64],
    alpha: f64,
    weight_fn: &dyn Fn(&[f64]) -> f64,
    cfg: &ConformalConfig,
    seed: u64,
) -> Result<IntervalSet> {
    split_conformal(ScoreKind::Cqr, train, calib, x_test, alpha, weight_fn, cfg, None, seed)
}
