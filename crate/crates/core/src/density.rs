//! Conditional density estimation by classification against a reference.
//!
//! Each training pair `(x_i, y_i)` is labelled `z = 1` and paired with a
//! decoy `(x_i, ỹ_i)` labelled `z = 0`, where `ỹ_i` is drawn from a Gaussian
//! reference `f0`. Because the decoys reuse the observed covariates, the
//! classifier's odds estimate `f(y | x) / f0(y)` directly and the covariate
//! marginal never has to be modelled:
//!
//! ```text
//! f̂(y | x) = f0(y) · μ̂(x, y) / (1 − μ̂(x, y))
//! ```

use ndarray::{Array2, ArrayView2};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{fit_classifier, LearnerConfig, ProbClassifier};
use crate::rng;
use crate::stats::{gaussian_pdf, mean, sample_sd};

/// Default sd inflation of the Gaussian reference relative to the data.
pub const DEFAULT_INFLATION: f64 = 1.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceDistribution {
    pub mean: f64,
    pub sd: f64,
}

impl ReferenceDistribution {
    pub fn pdf(&self, y: f64) -> f64 {
        gaussian_pdf(y, self.mean, self.sd)
    }
}

/// Gaussian reference with the sample mean of `y` and `inflation` times its
/// sample standard deviation.
pub fn make_reference(y: &[f64], inflation: f64) -> Result<ReferenceDistribution> {
    if y.len() < 2 {
        return Err(Error::InvalidArgument(
            "reference needs at least 2 outcomes".into(),
        ));
    }
    if !(inflation >= 1.0 && inflation.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "inflation {inflation} must be >= 1"
        )));
    }
    let sd = sample_sd(y);
    if !(sd > 0.0) {
        return Err(Error::Degenerate("outcome has zero variance".into()));
    }
    Ok(ReferenceDistribution {
        mean: mean(y),
        sd: inflation * sd,
    })
}

pub fn sample_reference(reference: &ReferenceDistribution, n: usize, seed: u64) -> Vec<f64> {
    let normal = Normal::new(reference.mean, reference.sd).expect("sd is positive");
    let mut r = rng::rng(seed);
    (0..n).map(|_| normal.sample(&mut r)).collect()
}

/// Anything that can evaluate an estimated `f(· | x)` along a grid of outcomes.
pub trait ConditionalDensity {
    fn density_on_grid(&self, x: &[f64], grid: &[f64]) -> Result<Vec<f64>>;
}

impl ConditionalDensity for ConditionalDensityModel {
    fn density_on_grid(&self, x: &[f64], grid: &[f64]) -> Result<Vec<f64>> {
        ConditionalDensityModel::density_on_grid(self, x, grid)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalDensityModel {
    classifier: ProbClassifier,
    reference: ReferenceDistribution,
    dim: usize,
}

impl ConditionalDensityModel {
    /// Wraps a classifier over `(x, y)` inputs, i.e. of input dimension `d + 1`.
    pub fn from_parts(classifier: ProbClassifier, reference: ReferenceDistribution) -> Result<Self> {
        let dim = classifier
            .dim()
            .checked_sub(1)
            .ok_or_else(|| Error::Shape("classifier must take (x, y) inputs".into()))?;
        Ok(Self {
            classifier,
            reference,
            dim,
        })
    }

    pub fn reference(&self) -> &ReferenceDistribution {
        &self.reference
    }

    pub fn classifier(&self) -> &ProbClassifier {
        &self.classifier
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn invert(&self, mu: f64, y: f64) -> f64 {
        self.reference.pdf(y) * mu / (1.0 - mu)
    }

    pub fn eval_density(&self, x: &[f64], y: f64) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::Shape(format!(
                "expected {} covariates, got {}",
                self.dim,
                x.len()
            )));
        }
        let mut xy = x.to_vec();
        xy.push(y);
        let mu = self.classifier.predict_proba(&xy)?;
        Ok(self.invert(mu, y))
    }

    /// `f̂(g | x)` for every `g` of an ascending grid.
    pub fn density_on_grid(&self, x: &[f64], grid: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::Shape(format!(
                "expected {} covariates, got {}",
                self.dim,
                x.len()
            )));
        }
        let mus = self.classifier.predict_proba_over_last(x, grid)?;
        Ok(mus.into_iter().zip(grid).map(|(mu, &y)| self.invert(mu, y)).collect())
    }
}

/// Fits the augmented classification problem: `n` observed rows labelled 1
/// and `n` decoy rows `(x_i, ỹ_i)` labelled 0, with `ỹ` drawn from
/// `reference` under `seed`.
pub fn fit_conditional_density(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    reference: &ReferenceDistribution,
    cfg: &LearnerConfig,
    seed: u64,
) -> Result<ConditionalDensityModel> {
    let (n, d) = x.dim();
    if y.len() != n {
        return Err(Error::Shape(format!("{n} covariate rows but {} outcomes", y.len())));
    }
    if n < 2 {
        return Err(Error::InvalidArgument("need at least 2 rows".into()));
    }
    let decoys = sample_reference(reference, n, seed);
    let aug = Array2::from_shape_fn((2 * n, d + 1), |(i, j)| {
        let row = i % n;
        match (j == d, i < n) {
            (false, _) => x[[row, j]],
            (true, true) => y[row],
            (true, false) => decoys[row],
        }
    });
    let z: Vec<u8> = (0..2 * n).map(|i| u8::from(i < n)).collect();
    let classifier = fit_classifier(aug.view(), &z, cfg)?;
    ConditionalDensityModel::from_parts(classifier, *reference)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_model(p: f64, reference: ReferenceDistribution) -> ConditionalDensityModel {
        ConditionalDensityModel::from_parts(ProbClassifier::constant(p, 2, 0.01), reference).unwrap()
    }

    #[test]
    fn reference_moments() {
        let r = make_reference(&[0.0, 2.0], 1.2).unwrap();
        assert_eq!(r.mean, 1.0);
        assert!((r.sd - 1.2 * 2f64.sqrt()).abs() < 1e-15);
        let r = make_reference(&[1.0, 2.0, 6.0], 1.0).unwrap();
        assert!((r.sd - sample_sd(&[1.0, 2.0, 6.0])).abs() < 1e-15);
        assert!(matches!(make_reference(&[3.0, 3.0, 3.0], 1.2), Err(Error::Degenerate(_))));
        assert!(make_reference(&[1.0, 2.0], 0.9).is_err());
    }

    #[test]
    fn reference_sampling() {
        let r = ReferenceDistribution { mean: 2.0, sd: 3.0 };
        let n = 100_000;
        let s = sample_reference(&r, n, 17);
        assert!((mean(&s) - 2.0).abs() < 4.0 * 3.0 / (n as f64).sqrt());
        assert_eq!(s[..10], sample_reference(&r, 10, 17)[..]);
        let one = sample_reference(&r, 1, 3);
        assert!(one.len() == 1 && one[0].is_finite());
    }

    #[test]
    fn half_classifier_returns_reference() {
        let r = ReferenceDistribution { mean: 0.5, sd: 1.3 };
        let m = constant_model(0.5, r);
        for (x, y) in [(0.0, 0.0), (3.0, -2.0), (-1.0, 7.5)] {
            assert_eq!(m.eval_density(&[x], y).unwrap(), r.pdf(y));
        }
    }

    #[test]
    fn odds_ratio_three_means_three_quarters() {
        // μ = (f/f0) / (1 + f/f0)
        let ratio = 3.0;
        let mu = ratio / (1.0 + ratio);
        assert_eq!(mu, 0.75);
        let r = ReferenceDistribution { mean: 0.0, sd: 1.0 };
        let m = constant_model(mu, r);
        assert!((m.eval_density(&[0.2], 0.4).unwrap() - 3.0 * r.pdf(0.4)).abs() < 1e-15);
    }

    #[test]
    fn clip_arithmetic() {
        let r = ReferenceDistribution { mean: 0.0, sd: 1.0 };
        let hi = constant_model(1.0, r);
        assert!((hi.eval_density(&[0.0], 0.3).unwrap() - r.pdf(0.3) * 99.0).abs() < 1e-12);
        let lo = constant_model(0.0, r);
        assert!((lo.eval_density(&[0.0], 0.3).unwrap() - r.pdf(0.3) * 0.01 / 0.99).abs() < 1e-15);
        assert!(hi.eval_density(&[0.0], 60.0).unwrap() < 1e-300);
        assert!(matches!(hi.eval_density(&[0.0, 1.0], 0.0), Err(Error::Shape(_))));
    }

    #[test]
    fn reference_factor_passes_through() {
        let narrow = ReferenceDistribution { mean: 1.0, sd: 0.5 };
        let wide = ReferenceDistribution { mean: 1.0, sd: 1.0 };
        for mu in [0.2, 0.5, 0.9] {
            let a = constant_model(mu, narrow);
            let b = constant_model(mu, wide);
            for y in [-1.0, 0.0, 1.0, 2.5] {
                let ratio = a.eval_density(&[0.0], y).unwrap() / b.eval_density(&[0.0], y).unwrap();
                assert!((ratio - narrow.pdf(y) / wide.pdf(y)).abs() < 1e-12 * ratio.abs().max(1.0));
            }
        }
    }

    #[test]
    fn grid_matches_pointwise() {
        let n = 400;
        let x = Array2::from_shape_fn((n, 1), |(i, _)| (i % 20) as f64 / 20.0);
        let y: Vec<f64> = (0..n).map(|i| x[[i, 0]] + ((i * 37) % 11) as f64 / 11.0 - 0.5).collect();
        let r = make_reference(&y, 1.2).unwrap();
        let m = fit_conditional_density(x.view(), &y, &r, &LearnerConfig::default(), 1).unwrap();
        let grid: Vec<f64> = (0..101).map(|k| -2.0 + k as f64 * 0.04).collect();
        let fast = m.density_on_grid(&[0.35], &grid).unwrap();
        for (g, f) in grid.iter().zip(&fast) {
            let slow = m.eval_density(&[0.35], *g).unwrap();
            assert!(*f >= 0.0 && f.is_finite());
            assert!((slow - f).abs() < 1e-9 * slow.max(1.0));
        }
    }
}
