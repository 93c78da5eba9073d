//! Sample summaries and the one-sample Kolmogorov–Smirnov statistic.

use std::f64::consts::SQRT_2;

use libm::erfc;
use nalgebra::DMatrix;

/// Standard normal CDF, `Φ(x) = ½·erfc(−x/√2)`.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; `NaN` for fewer than two values.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let mu = mean(xs);
    xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// Unbiased covariance matrix of the rows of `samples` (`N × d`).
pub fn covariance(samples: &DMatrix<f64>) -> DMatrix<f64> {
    let n = samples.nrows();
    let means = samples.row_mean();
    let mut centered = samples.clone();
    for mut row in centered.row_iter_mut() {
        row -= &means;
    }
    centered.transpose() * &centered / (n as f64 - 1.0)
}

/// Median (average of the middle pair for even lengths).
pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

/// Linear-interpolation quantile, `q ∈ [0, 1]`.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// `sup_x |F̂(x) − F(x)|` for the empirical CDF of `xs` against `cdf`.
pub fn ks_statistic(xs: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// KS distance to `N(0, variance)`.
pub fn ks_normal(xs: &[f64], variance: f64) -> f64 {
    let sd = variance.sqrt();
    ks_statistic(xs, |x| normal_cdf(x / sd))
}
