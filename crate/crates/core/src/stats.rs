//! Small numeric helpers shared across modules.

/// Inverted-CDF empirical quantile of an ascending slice:
/// the `ceil(q * n)`-th smallest value (1-based), clamped to the sample.
pub fn sorted_quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let n = sorted.len();
    let k = (q * n as f64).ceil() as usize;
    sorted[k.clamp(1, n) - 1]
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation with the `n - 1` denominator; 0 for `n < 2`.
pub fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    let ss: f64 = v.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (v.len() - 1) as f64).sqrt()
}

pub fn gaussian_pdf(y: f64, mean: f64, sd: f64) -> f64 {
    let z = (y - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

pub fn sigmoid(s: f64) -> f64 {
    1.0 / (1.0 + (-s).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_indexing() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(sorted_quantile(&s, 0.5), 2.0);
        assert_eq!(sorted_quantile(&s, 0.51), 3.0);
        assert_eq!(sorted_quantile(&s, 0.0), 1.0);
        assert_eq!(sorted_quantile(&s, 1.0), 4.0);
    }

    #[test]
    fn sd_of_known_values() {
        assert!((sample_sd(&[1.0, 2.0, 3.0]) - 1.0).abs() < 1e-15);
        assert_eq!(sample_sd(&[5.0]), 0.0);
    }
}
