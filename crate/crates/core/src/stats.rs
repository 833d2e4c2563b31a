//! Monte Carlo estimators and log-log rate fits.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Minimum number of scales accepted by [`fit_rate`].
pub const MIN_FIT_POINTS: usize = 4;

/// Batches used for standard errors of `L_m` norms with `m != 2`.
const BATCHES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    pub fn within(&self, target: f64, k_se: f64) -> bool {
        (self.value - target).abs() <= k_se * self.se
    }
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Unbiased sample variance.
pub fn variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

pub fn mean_estimate(v: &[f64]) -> Estimate {
    Estimate { value: mean(v), se: (variance(v) / v.len() as f64).sqrt() }
}

/// `E[ab]` with its standard error.
pub fn product_moment(a: &[f64], b: &[f64]) -> Estimate {
    let p: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    mean_estimate(&p)
}

/// Centered covariance with a delta-method standard error.
pub fn covariance(a: &[f64], b: &[f64]) -> Estimate {
    let ma = mean(a);
    let mb = mean(b);
    let p: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).collect();
    let n = p.len() as f64;
    let e = mean_estimate(&p);
    Estimate { value: e.value * n / (n - 1.0).max(1.0), se: e.se }
}

/// `(E|X|^m)^{1/m}` with a standard error. `m = 2` uses the delta method on the
/// second moment; other orders use batching.
pub fn lm_norm(v: &[f64], m: f64) -> Estimate {
    let pow: Vec<f64> = v.iter().map(|x| x.abs().powf(m)).collect();
    let mom = mean_estimate(&pow);
    let value = mom.value.powf(1.0 / m);
    if (m - 2.0).abs() < f64::EPSILON || v.len() < 2 * BATCHES {
        let se = if mom.value > 0.0 { mom.se * mom.value.powf(1.0 / m - 1.0) / m } else { 0.0 };
        return Estimate { value, se };
    }
    let size = v.len() / BATCHES;
    let norms: Vec<f64> = pow
        .chunks(size)
        .take(BATCHES)
        .map(|c| mean(c).powf(1.0 / m))
        .collect();
    Estimate { value, se: (variance(&norms) / BATCHES as f64).sqrt() }
}

/// Unbiased estimate of `E[X^2]` from two independent conditional estimates
/// of the same per-sample quantity, returned as a signed `L_2`-like value
/// `sign(q)·|q|^{1/2}`.
pub fn split_second_moment(a: &[f64], b: &[f64]) -> Estimate {
    let q = product_moment(a, b);
    let value = q.value.signum() * q.value.abs().sqrt();
    let se = if q.value.abs() > 0.0 { q.se / (2.0 * q.value.abs().sqrt()) } else { q.se.sqrt() };
    Estimate { value, se }
}

/// Ordinary least squares on `log2(scale)` against `log2(value)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub scales: Vec<f64>,
    pub values: Vec<f64>,
}

pub fn fit_rate(scales: &[f64], values: &[f64]) -> Result<RateFit> {
    if scales.len() != values.len() {
        return invalid("scale and value lists differ in length");
    }
    if scales.len() < MIN_FIT_POINTS {
        return invalid(format!("rate fit needs at least {MIN_FIT_POINTS} points, got {}", scales.len()));
    }
    if scales.iter().chain(values).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return invalid("rate fit needs positive finite scales and values");
    }
    let xs: Vec<f64> = scales.iter().map(|s| s.log2()).collect();
    let ys: Vec<f64> = values.iter().map(|v| v.log2()).collect();
    let (slope, intercept, r_squared) = ols(&xs, &ys);
    Ok(RateFit { slope, intercept, r_squared, scales: scales.to_vec(), values: values.to_vec() })
}

pub fn ols(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let mx = mean(xs);
    let my = mean(ys);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 { (sxy * sxy) / (sxx * syy) } else { 1.0 };
    (slope, intercept, r2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law() {
        let s = [0.5, 0.25, 0.125, 0.0625];
        let v: Vec<f64> = s.iter().map(|x: &f64| 3.0 * x.powf(0.7)).collect();
        let fit = fit_rate(&s, &v).unwrap();
        assert!((fit.slope - 0.7).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!(fit_rate(&s[..3], &v[..3]).is_err());
    }

    #[test]
    fn norms() {
        let v = [1.0, -1.0, 1.0, -1.0];
        assert!((lm_norm(&v, 2.0).value - 1.0).abs() < 1e-15);
        assert!((lm_norm(&v, 4.0).value - 1.0).abs() < 1e-15);
        assert_eq!(mean(&v), 0.0);
    }
}
