//! Small least-squares helpers.

use faer::linalg::solvers::SolveLstsq;
use faer::Mat;

/// Coefficients `c[0] + c[1] x + ... + c[degree] x^degree` minimising the
/// squared error. Requires more than `degree` points.
pub fn polyfit(x: &[f64], y: &[f64], degree: usize) -> Vec<f64> {
    assert_eq!(x.len(), y.len());
    assert!(x.len() > degree, "need at least {} points", degree + 1);
    let a = Mat::<f64>::from_fn(x.len(), degree + 1, |i, j| x[i].powi(j as i32));
    let b = Mat::<f64>::from_fn(y.len(), 1, |i, _| y[i]);
    let c = a.qr().solve_lstsq(&b);
    (0..=degree).map(|j| c[(j, 0)]).collect()
}

pub fn polyval(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &v| acc * x + v)
}

/// Straight line `y = slope x + intercept`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let c = polyfit(x, y, 1);
    (c[1], c[0])
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Linear-interpolation quantile of unsorted data, `q` in `[0, 1]`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

pub fn interquartile_range(values: &[f64]) -> f64 {
    quantile(values, 0.75) - quantile(values, 0.25)
}
