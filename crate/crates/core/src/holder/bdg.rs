//! Empirical check of the extended BDG inequality on two-parameter arrays.
//!
//! The filtration is generated by independent standard normals `ε_j`, one per
//! grid index; `F^θ_k` holds the `ε_j` with `j_i < k_i` for `i ∈ θ`. Every
//! array has the form `Z_k = μ_k + σ_k X_k` with `X_k` centred, and `X_k` is
//! known to a filtration exactly when its source index is.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::increments::IndexSet;
use crate::rng::NormalStream;
use crate::stats::{lm_norm, Estimate};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArrayKind {
    /// `X_k = ε_k (1 + ρ tanh(ε_{k−1}))`: martingale differences in both axes.
    Modulated { rho: f64 },
    /// `X_k = ε_{(k_1, k_2−1)}`: martingale differences in the first axis only.
    Lagged,
}

/// Random array on `{0..n−1}²` with product-structured mean and scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BdgArray {
    pub n: usize,
    pub kind: ArrayKind,
    /// Per-axis factors: `μ_k = mean[0][k_1] mean[1][k_2]`.
    pub mean: [Vec<f64>; 2],
    /// Per-axis factors: `σ_k = scale[0][k_1] scale[1][k_2]`.
    pub scale: [Vec<f64>; 2],
    /// Lower corner `y` of the summation ranges `I_i = {y_i, …, n−1}`.
    pub start: [usize; 2],
}

impl BdgArray {
    fn mu(&self, k: [usize; 2]) -> f64 {
        self.mean[0][k[0]] * self.mean[1][k[1]]
    }

    fn sigma(&self, k: [usize; 2]) -> f64 {
        self.scale[0][k[0]] * self.scale[1][k[1]]
    }

    /// Index whose `ε` drives `X_k`; `None` when it lies before the grid.
    fn source(&self, k: [usize; 2]) -> Option<[usize; 2]> {
        match self.kind {
            ArrayKind::Modulated { .. } => Some(k),
            ArrayKind::Lagged => (k[1] > 0).then(|| [k[0], k[1] - 1]),
        }
    }

    /// Hypothesis constants: `a_i = |mean_i| + scale_i`, and `b = a` on axes
    /// where `X` is not a martingale difference, `b_i = |mean_i|` otherwise
    /// (floored to keep them positive).
    pub fn constants(&self) -> ([Vec<f64>; 2], [Vec<f64>; 2]) {
        let a: [Vec<f64>; 2] =
            std::array::from_fn(|i| self.mean[i].iter().zip(&self.scale[i]).map(|(m, s)| m.abs() + s).collect());
        let b: [Vec<f64>; 2] = std::array::from_fn(|i| {
            let martingale = !(i == 1 && self.kind == ArrayKind::Lagged);
            if martingale {
                self.mean[i].iter().zip(&a[i]).map(|(m, ai)| m.abs().max(1e-3 * ai)).collect()
            } else {
                a[i].clone()
            }
        });
        (a, b)
    }
}

/// Draws an array: mean and scale factors decay geometrically with random
/// rates, and the start corner is random in `{0, …, n/4}²`.
pub fn random_array(n: usize, rng: &mut impl Rng) -> BdgArray {
    let kind = if rng.random_bool(0.5) { ArrayKind::Modulated { rho: rng.random_range(0.0..0.9) } } else { ArrayKind::Lagged };
    let factors = |rng: &mut dyn rand::RngCore, amp: f64| -> Vec<f64> {
        let rate: f64 = rng.random_range(0.0..0.5);
        let a = amp * rng.random_range(0.2..1.0);
        (0..n).map(|k| a * 2f64.powf(-rate * k as f64)).collect()
    };
    let mean_amp = if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..0.3) };
    let mean = [factors(rng, mean_amp), factors(rng, mean_amp)];
    let scale = [factors(rng, 1.0), factors(rng, 1.0)];
    let start = [rng.random_range(0..=n / 4), rng.random_range(0..=n / 4)];
    BdgArray { n, kind, mean, scale, start }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BdgRow {
    pub theta: IndexSet,
    pub eta: IndexSet,
    pub lhs: Estimate,
    pub rhs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BdgReport {
    /// Fitted `c = max_{k,θ} ‖E^θ_k Z_k‖_m / (b_{k,θ} a_{k,θ^c})`.
    pub c: f64,
    pub rows: Vec<BdgRow>,
    /// `max lhs / (c · rhs)`.
    pub constant: f64,
    /// Rows where `lhs − 4 se > bound · c · rhs`.
    pub violations: usize,
}

/// Monte Carlo evaluation of both sides of the extended BDG inequality for
/// every `θ, η ⊆ {1,2}`, with sums over `I_θ` started at the array's corner.
pub fn bdg_check(array: &BdgArray, m: f64, samples: usize, seed: u64, bound: f64) -> Result<BdgReport> {
    let n = array.n;
    if n == 0 || array.mean.iter().chain(&array.scale).any(|v| v.len() != n) {
        return invalid("array factors must have one entry per index");
    }
    if samples < 2 {
        return invalid("need at least two samples");
    }
    let (a, b) = array.constants();
    let y = array.start;
    let subsets = IndexSet::full(2)?.subsets();

    // One draw of all ε and the resulting X_k, per sample.
    let draws: Vec<Vec<f64>> = (0..samples)
        .into_par_iter()
        .map(|s| {
            let mut st = NormalStream::new(seed, 0, s as u64);
            let eps: Vec<f64> = (0..n * n).map(|_| st.next_normal()).collect();
            let mut x = vec![0.0; n * n];
            for k0 in 0..n {
                for k1 in 0..n {
                    x[k0 * n + k1] = match array.kind {
                        ArrayKind::Modulated { rho } => {
                            let w = if k0 > 0 && k1 > 0 { eps[(k0 - 1) * n + k1 - 1] } else { 0.0 };
                            eps[k0 * n + k1] * (1.0 + rho * w.tanh())
                        }
                        ArrayKind::Lagged => array.source([k0, k1]).map_or(0.0, |j| eps[j[0] * n + j[1]]),
                    };
                }
            }
            x
        })
        .collect();

    // E^G Z_k: X_k survives when its source index is G-measurable.
    let known = |eta: IndexSet, at: [usize; 2], k: [usize; 2]| -> bool {
        match array.source(k) {
            None => true,
            Some(j) => (0..2).all(|i| !eta.contains(i) || j[i] < at[i]),
        }
    };
    let conditioned = |eta: IndexSet, at: [usize; 2], k: [usize; 2], s: usize| -> f64 {
        let x = if known(eta, at, k) { draws[s][k[0] * n + k[1]] } else { 0.0 };
        array.mu(k) + array.sigma(k) * x
    };

    let mut c = 0.0f64;
    for k0 in 0..n {
        for k1 in 0..n {
            let k = [k0, k1];
            for &theta in &subsets {
                let v: Vec<f64> = (0..samples).map(|s| conditioned(theta, k, k, s)).collect();
                let mut w = 1.0;
                for i in 0..2 {
                    w *= if theta.contains(i) { b[i][k[i]] } else { a[i][k[i]] };
                }
                c = c.max(lm_norm(&v, m).value / w);
            }
        }
    }

    let range = |theta: IndexSet, i: usize| if theta.contains(i) { y[i]..n } else { y[i]..y[i] + 1 };
    let mut rows = Vec::new();
    for &theta in &subsets {
        for &eta in &subsets {
            let v: Vec<f64> = (0..samples)
                .map(|s| {
                    let mut sum = 0.0;
                    for k0 in range(theta, 0) {
                        for k1 in range(theta, 1) {
                            sum += conditioned(eta, y, [k0, k1], s);
                        }
                    }
                    sum
                })
                .collect();
            let lhs = lm_norm(&v, m);
            let rest = theta.difference(eta);
            let mut rhs = 0.0;
            for theta1 in rest.subsets() {
                let theta2 = rest.difference(theta1);
                let summed = eta.union(theta1);
                let mut term = 1.0;
                for i in 0..2 {
                    let r = if theta.contains(i) && !theta2.contains(i) { range(theta, i) } else { y[i]..y[i] + 1 };
                    term *= if summed.contains(i) {
                        r.map(|k| b[i][k]).sum::<f64>()
                    } else {
                        let r2 = if theta2.contains(i) { range(theta, i) } else { y[i]..y[i] + 1 };
                        r2.map(|k| a[i][k] * a[i][k]).sum::<f64>().sqrt()
                    };
                }
                rhs += term;
            }
            rows.push(BdgRow { theta, eta, lhs, rhs });
        }
    }
    let constant = rows.iter().map(|r| r.lhs.value / (c * r.rhs)).fold(0.0, f64::max);
    let violations = rows.iter().filter(|r| r.lhs.value - 4.0 * r.lhs.se > bound * c * r.rhs).count();
    Ok(BdgReport { c, rows, constant, violations })
}

/// Draws `count` arrays from a seeded generator.
pub fn random_arrays(n: usize, count: usize, seed: u64) -> Vec<BdgArray> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| random_array(n, &mut rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iid_sum_is_tight() {
        let n = 8;
        let array = BdgArray {
            n,
            kind: ArrayKind::Modulated { rho: 0.0 },
            mean: [vec![0.0; n], vec![0.0; n]],
            scale: [vec![1.0; n], vec![1.0; n]],
            start: [0, 0],
        };
        let r = bdg_check(&array, 2.0, 4000, 1, 10.0).unwrap();
        let full = IndexSet::full(2).unwrap();
        let row = r.rows.iter().find(|r| r.theta == full && r.eta.is_empty()).unwrap();
        assert!(row.lhs.within(n as f64, 4.0), "{:?}", row.lhs);
        assert_eq!(r.violations, 0);
    }
}
