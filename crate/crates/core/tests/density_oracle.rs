//! Conditional density estimates against closed-form Gaussian densities.

use ite_conformal::density::{fit_conditional_density, make_reference, DEFAULT_INFLATION};
use ite_conformal::learners::LearnerConfig;
use ite_conformal::rng::rng;
use ite_conformal::stats::gaussian_pdf;
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

fn sample(n: usize, seed: u64, mean: impl Fn(f64) -> f64, sd: impl Fn(f64) -> f64) -> (Array2<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let xs: Vec<f64> = (0..n).map(|_| r.gen::<f64>()).collect();
    let y = xs
        .iter()
        .map(|&x| mean(x) + sd(x) * r.sample::<f64, _>(StandardNormal))
        .collect();
    (Array2::from_shape_vec((n, 1), xs).unwrap(), y)
}

#[test]
fn homoscedastic_shift_is_recovered() {
    let mean = |x: f64| 2.0 * x;
    let (x, y) = sample(3000, 11, mean, |_| 0.5);
    let reference = make_reference(&y, DEFAULT_INFLATION).unwrap();
    let model = fit_conditional_density(x.view(), &y, &reference, &LearnerConfig::default(), 12).unwrap();
    let mut err = 0.0;
    let mut count = 0;
    for i in 0..20 {
        let xv = 0.1 + 0.8 * i as f64 / 19.0;
        for j in 0..20 {
            let yv = mean(xv) - 1.0 + 2.0 * j as f64 / 19.0;
            err += (model.eval_density(&[xv], yv).unwrap() - gaussian_pdf(yv, mean(xv), 0.5)).abs();
            count += 1;
        }
    }
    let mae = err / count as f64;
    assert!(mae < 0.15, "mae {mae}");
}

#[test]
fn estimated_mode_tracks_the_mean() {
    let mean = |x: f64| 3.0 * x;
    let (x, y) = sample(3000, 21, mean, |_| 0.4);
    let reference = make_reference(&y, DEFAULT_INFLATION).unwrap();
    let model = fit_conditional_density(x.view(), &y, &reference, &LearnerConfig::default(), 22).unwrap();
    let grid: Vec<f64> = (0..400).map(|k| -1.0 + 5.0 * k as f64 / 399.0).collect();
    for xv in [0.2, 0.5, 0.8] {
        let f = model.density_on_grid(&[xv], &grid).unwrap();
        let (k, _) = f
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        assert!((grid[k] - mean(xv)).abs() < 0.5, "x {xv}: mode {} vs {}", grid[k], mean(xv));
    }
}

#[test]
fn fit_is_deterministic() {
    let (x, y) = sample(500, 5, |x| x, |_| 1.0);
    let reference = make_reference(&y, DEFAULT_INFLATION).unwrap();
    let cfg = LearnerConfig::default();
    let a = fit_conditional_density(x.view(), &y, &reference, &cfg, 9).unwrap();
    let b = fit_conditional_density(x.view(), &y, &reference, &cfg, 9).unwrap();
    for v in [-1.0, 0.0, 0.7, 2.0] {
        assert_eq!(a.eval_density(&[0.3], v).unwrap(), b.eval_density(&[0.3], v).unwrap());
    }
}
