//! Orthonormal Daubechies filters by spectral factorization.

use num_complex::Complex64;

use crate::error::{invalid, Result};

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn horner(coeffs: &[f64], z: Complex64) -> (Complex64, Complex64) {
    let mut p = Complex64::new(0.0, 0.0);
    let mut dp = Complex64::new(0.0, 0.0);
    for &c in coeffs.iter().rev() {
        dp = dp * z + p;
        p = p * z + c;
    }
    (p, dp)
}

/// Roots of a real polynomial given by increasing-power coefficients
/// (Durand–Kerner, then Newton polishing).
pub fn polynomial_roots(coeffs: &[f64]) -> Vec<Complex64> {
    let deg = coeffs.len() - 1;
    if deg == 0 {
        return Vec::new();
    }
    let lead = coeffs[deg];
    let monic: Vec<f64> = coeffs.iter().map(|c| c / lead).collect();
    let seed = Complex64::new(0.4, 0.9);
    let mut roots: Vec<Complex64> = (0..deg).map(|k| seed.powu(k as u32 + 1)).collect();
    for _ in 0..2000 {
        let mut moved = 0.0f64;
        for i in 0..deg {
            let (p, _) = horner(&monic, roots[i]);
            let mut denom = Complex64::new(1.0, 0.0);
            for j in 0..deg {
                if i != j {
                    denom *= roots[i] - roots[j];
                }
            }
            let step = p / denom;
            roots[i] -= step;
            moved = moved.max(step.norm());
        }
        if moved < 1e-15 {
            break;
        }
    }
    for r in roots.iter_mut() {
        for _ in 0..5 {
            let (p, dp) = horner(&monic, *r);
            if dp.norm() == 0.0 {
                break;
            }
            *r -= p / dp;
        }
    }
    roots
}

/// Scaling filter `h` of the Daubechies wavelet with `n` vanishing moments,
/// normalized so that `Σ h = √2` (length `2n`, extremal phase).
pub fn daubechies_filter(n: usize) -> Result<Vec<f64>> {
    if !(1..=10).contains(&n) {
        return invalid(format!("Daubechies order {n} outside 1..=10"));
    }
    // |Q|^2 = P(sin^2(w/2)), P(y) = Σ_{k<n} C(n-1+k, k) y^k.
    let p: Vec<f64> = (0..n).map(|k| binomial(n - 1 + k, k)).collect();
    let mut poly = vec![Complex64::new(1.0, 0.0)];
    for y in polynomial_roots(&p) {
        // y = (2 - z - 1/z)/4  =>  z^2 - (2 - 4y) z + 1 = 0.
        let b = Complex64::new(2.0, 0.0) - 4.0 * y;
        let disc = (b * b - 4.0).sqrt();
        let z1 = (b + disc) / 2.0;
        let z2 = (b - disc) / 2.0;
        let z = if z1.norm() < z2.norm() { z1 } else { z2 };
        poly = multiply(&poly, &[-z, Complex64::new(1.0, 0.0)]);
    }
    for _ in 0..n {
        poly = multiply(&poly, &[Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0)]);
    }
    let mut h: Vec<f64> = poly.iter().map(|c| c.re).collect();
    let s: f64 = h.iter().sum();
    let scale = std::f64::consts::SQRT_2 / s;
    h.iter_mut().for_each(|v| *v *= scale);
    if h[0].abs() < h[h.len() - 1].abs() {
        h.reverse();
    }
    Ok(h)
}

fn multiply(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Quadrature mirror of `h`: `g_k = (−1)^k h_{L−1−k}`.
pub fn detail_filter(h: &[f64]) -> Vec<f64> {
    let l = h.len();
    (0..l).map(|k| if k % 2 == 0 { h[l - 1 - k] } else { -h[l - 1 - k] }).collect()
}

/// `max_m |Σ_k h_k h_{k+2m} − δ_{m,0}|`.
pub fn double_shift_residual(h: &[f64]) -> f64 {
    let l = h.len();
    let mut worst = 0.0f64;
    let mut m = 0;
    while 2 * m < l {
        let s: f64 = (0..l - 2 * m).map(|k| h[k] * h[k + 2 * m]).sum();
        let target = if m == 0 { 1.0 } else { 0.0 };
        worst = worst.max((s - target).abs());
        m += 1;
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn db2_closed_form() {
        let h = daubechies_filter(2).unwrap();
        let s3 = 3f64.sqrt();
        let d = 4.0 * std::f64::consts::SQRT_2;
        let expect = [(1.0 + s3) / d, (3.0 + s3) / d, (3.0 - s3) / d, (1.0 - s3) / d];
        for (a, b) in h.iter().zip(expect) {
            assert!((a - b).abs() < 1e-14, "{h:?}");
        }
    }

    #[test]
    fn qmf_conditions_all_orders() {
        for n in 1..=10 {
            let h = daubechies_filter(n).unwrap();
            assert_eq!(h.len(), 2 * n);
            assert!((h.iter().sum::<f64>() - std::f64::consts::SQRT_2).abs() < 1e-12);
            assert!(double_shift_residual(&h) < 1e-10, "order {n}: {}", double_shift_residual(&h));
            let g = detail_filter(&h);
            for m in 0..n {
                let moment: f64 = g.iter().enumerate().map(|(k, v)| v * (k as f64).powi(m as i32)).sum();
                let scale: f64 = g.iter().enumerate().map(|(k, v)| (v * (k as f64).powi(m as i32)).abs()).sum();
                assert!(moment.abs() < 1e-10 * scale.max(1.0), "order {n} moment {m}: {moment}");
            }
        }
    }
}
