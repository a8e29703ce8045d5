//! Linear models on a (possibly expanded) standardized basis.

use nalgebra::{DMatrix, DVector};
use ndarray::ArrayView2;

use super::Basis;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Linear {
    basis: Basis,
    center: Vec<f64>,
    scale: Vec<f64>,
    weights: Vec<f64>,
    intercept: f64,
}

fn expand(basis: Basis, x: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend_from_slice(x);
    if basis == Basis::RawPairwise {
        for i in 0..x.len() {
            for j in i..x.len() {
                out.push(x[i] * x[j]);
            }
        }
    }
}

/// Expanded, standardized design: row-major `n x k`.
struct Design {
    rows: Vec<f64>,
    k: usize,
    center: Vec<f64>,
    scale: Vec<f64>,
}

impl Design {
    fn new(x: ArrayView2<'_, f64>, basis: Basis) -> Self {
        let n = x.nrows();
        let mut buf = Vec::new();
        let mut rows = Vec::new();
        for r in x.rows() {
            expand(basis, &r.to_vec(), &mut buf);
            rows.extend_from_slice(&buf);
        }
        let k = if n == 0 { 0 } else { rows.len() / n };
        let mut center = vec![0.0; k];
        let mut scale = vec![0.0; k];
        for j in 0..k {
            let col = (0..n).map(|i| rows[i * k + j]);
            let m = col.clone().sum::<f64>() / n as f64;
            let v = col.map(|c| (c - m) * (c - m)).sum::<f64>() / n as f64;
            center[j] = m;
            scale[j] = if v > 1e-24 { v.sqrt() } else { 1.0 };
        }
        for i in 0..n {
            for j in 0..k {
                rows[i * k + j] = (rows[i * k + j] - center[j]) / scale[j];
            }
        }
        Self {
            rows,
            k,
            center,
            scale,
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.k..(i + 1) * self.k]
    }

    fn n(&self) -> usize {
        if self.k == 0 {
            0
        } else {
            self.rows.len() / self.k
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Linear {
    fn from_design(d: Design, basis: Basis, weights: Vec<f64>, intercept: f64) -> Self {
        Self {
            basis,
            center: d.center,
            scale: d.scale,
            weights,
            intercept,
        }
    }

    pub(crate) fn predict(&self, x: &[f64]) -> f64 {
        let mut buf = Vec::with_capacity(self.weights.len());
        expand(self.basis, x, &mut buf);
        self.intercept
            + buf
                .iter()
                .zip(&self.center)
                .zip(&self.scale)
                .zip(&self.weights)
                .map(|(((v, c), s), w)| (v - c) / s * w)
                .sum::<f64>()
    }

    /// Full-batch gradient descent on the mean logistic loss.
    pub(crate) fn fit_logistic(x: ArrayView2<'_, f64>, z: &[f64], basis: Basis, iterations: usize, lr: f64) -> Self {
        let d = Design::new(x, basis);
        let n = d.n();
        let p = (z.iter().sum::<f64>() / n as f64).clamp(1e-6, 1.0 - 1e-6);
        let mut b = (p / (1.0 - p)).ln();
        let mut w = vec![0.0; d.k];
        let mut gw = vec![0.0; d.k];
        for _ in 0..iterations {
            gw.fill(0.0);
            let mut gb = 0.0;
            for i in 0..n {
                let row = d.row(i);
                let r = crate::stats::sigmoid(b + dot(row, &w)) - z[i];
                gb += r;
                for (g, v) in gw.iter_mut().zip(row) {
                    *g += r * v;
                }
            }
            b -= lr * gb / n as f64;
            for (wj, g) in w.iter_mut().zip(&gw) {
                *wj -= lr * g / n as f64;
            }
        }
        Self::from_design(d, basis, w, b)
    }

    /// Ordinary least squares via SVD of `[1 | standardized basis]`.
    pub(crate) fn fit_least_squares(x: ArrayView2<'_, f64>, y: &[f64], basis: Basis) -> Self {
        let d = Design::new(x, basis);
        let n = d.n();
        let a = DMatrix::from_fn(n, d.k + 1, |i, j| if j == 0 { 1.0 } else { d.row(i)[j - 1] });
        let rhs = DVector::from_column_slice(y);
        let sol = a
            .svd(true, true)
            .solve(&rhs, 1e-12)
            .expect("svd computed with both factors");
        let w = sol.iter().skip(1).copied().collect();
        Self::from_design(d, basis, w, sol[0])
    }

    /// Averaged subgradient descent on the mean pinball loss at level `q`,
    /// starting from the unconditional `q`-quantile.
    pub(crate) fn fit_quantile(
        x: ArrayView2<'_, f64>,
        y: &[f64],
        q: f64,
        basis: Basis,
        iterations: usize,
        lr: f64,
    ) -> Self {
        let d = Design::new(x, basis);
        let n = d.n();
        let mut sorted = y.to_vec();
        sorted.sort_by(f64::total_cmp);
        let spread = crate::stats::sample_sd(y).max(1e-12);
        let mut b = crate::stats::sorted_quantile(&sorted, q);
        let mut w = vec![0.0; d.k];
        let (mut b_avg, mut w_avg) = (b, w.clone());
        let mut gw = vec![0.0; d.k];
        for t in 1..=iterations {
            gw.fill(0.0);
            let mut gb = 0.0;
            for i in 0..n {
                let row = d.row(i);
                let f = b + dot(row, &w);
                let g = if y[i] > f {
                    -q
                } else if y[i] < f {
                    1.0 - q
                } else {
                    0.0
                };
                gb += g;
                for (acc, v) in gw.iter_mut().zip(row) {
                    *acc += g * v;
                }
            }
            let step = lr * spread / (t as f64).sqrt();
            b -= step * gb / n as f64;
            for (wj, g) in w.iter_mut().zip(&gw) {
                *wj -= step * g / n as f64;
            }
            let a = 1.0 / (t as f64 + 1.0);
            b_avg += a * (b - b_avg);
            for (wa, wj) in w_avg.iter_mut().zip(&w) {
                *wa += a * (wj - *wa);
            }
        }
        Self::from_design(d, basis, w_avg, b_avg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn pairwise_basis_includes_squares() {
        let mut out = Vec::new();
        expand(Basis::RawPairwise, &[2.0, 3.0], &mut out);
        assert_eq!(out, vec![2.0, 3.0, 4.0, 6.0, 9.0]);
    }

    #[test]
    fn least_squares_recovers_plane() {
        let x = Array2::from_shape_fn((30, 2), |(i, j)| ((i * (j + 3)) % 11) as f64);
        let y: Vec<f64> = x.rows().into_iter().map(|r| 1.5 - 2.0 * r[0] + 0.25 * r[1]).collect();
        let m = Linear::fit_least_squares(x.view(), &y, Basis::Raw);
        assert!((m.predict(&[4.0, -1.0]) - (1.5 - 8.0 - 0.25)).abs() < 1e-9);
    }
}
