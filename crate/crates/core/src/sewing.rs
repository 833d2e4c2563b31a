//! Multiparameter stochastic sewing over dyadic grid-like partitions, and its
//! link with reconstruction through the distributional derivative `∂^{[d]}Ξ_{x,·}`.
//!
//! Points are corner multi-indices of the noise grid.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{FieldKind, Grid, GridField};
use crate::increments::IndexSet;
use crate::noise::{zero_outside, FiltrationMask, NoiseSample};
use crate::reconstruction::{partial_sum, Germ};
use crate::stats::{fit_rate, lm_norm, Estimate, RateFit};
use crate::wavelets::{TestFunction, WaveletBasisD};

/// Two-parameter process `Ξ_{s,t}` on grid corners, one value per sample.
pub trait TwoPointGerm: Send + Sync {
    fn grid(&self) -> Grid;

    fn samples(&self) -> usize;

    /// `Ξ_{s,t}`; implementations may accept any pair of corners.
    fn eval(&self, s: &[usize], t: &[usize]) -> Vec<f64>;
}

/// `Ξ_{s,t} = Y_s □^{[d]}_{s,t} B`.
#[derive(Clone, Debug)]
pub struct FrozenIncrementGerm {
    pub y: GridField,
    pub b: GridField,
}

impl FrozenIncrementGerm {
    pub fn new(y: GridField, b: GridField) -> Result<Self> {
        if y.grid != b.grid || y.kind != FieldKind::CornerValues || b.kind != FieldKind::CornerValues {
            return invalid("both fields must be corner fields on one grid");
        }
        if y.samples != b.samples && y.samples != 1 && b.samples != 1 {
            return invalid("sample counts differ");
        }
        Ok(Self { y, b })
    }
}

impl TwoPointGerm for FrozenIncrementGerm {
    fn grid(&self) -> Grid {
        self.y.grid
    }

    fn samples(&self) -> usize {
        self.y.samples.max(self.b.samples)
    }

    fn eval(&self, s: &[usize], t: &[usize]) -> Vec<f64> {
        let full = IndexSet::full(s.len()).expect("valid dimension");
        let inc = self.b.increment(full, s, t);
        let p = self.y.grid.corner_index(s);
        (0..self.samples()).map(|k| self.y.value(p, k) * inc[if inc.len() == 1 { 0 } else { k }]).collect()
    }
}

/// `Ξ_{s,t} = □^{[d]}_{s,t} A`.
#[derive(Clone, Debug)]
pub struct AdditiveGerm {
    pub a: GridField,
}

impl TwoPointGerm for AdditiveGerm {
    fn grid(&self) -> Grid {
        self.a.grid
    }

    fn samples(&self) -> usize {
        self.a.samples
    }

    fn eval(&self, s: &[usize], t: &[usize]) -> Vec<f64> {
        self.a.increment(IndexSet::full(s.len()).expect("valid dimension"), s, t)
    }
}

/// `Ξ_{s,t} = (□^{[d]}_{s,t} Z)²`.
#[derive(Clone, Debug)]
pub struct SquaredIncrementGerm {
    pub z: GridField,
}

impl TwoPointGerm for SquaredIncrementGerm {
    fn grid(&self) -> Grid {
        self.z.grid
    }

    fn samples(&self) -> usize {
        self.z.samples
    }

    fn eval(&self, s: &[usize], t: &[usize]) -> Vec<f64> {
        self.z.increment(IndexSet::full(s.len()).expect("valid dimension"), s, t).into_iter().map(|v| v * v).collect()
    }
}

fn check_order(s: &[usize], u: &[usize], t: &[usize]) -> Result<()> {
    if s.len() != t.len() || u.len() != s.len() {
        return invalid("points of different dimensions");
    }
    if (0..s.len()).any(|i| !(s[i] <= u[i] && u[i] <= t[i])) {
        return invalid(format!("need s ≤ u ≤ t, got {s:?}, {u:?}, {t:?}"));
    }
    Ok(())
}

/// `δ^η_u Ξ_{s,t} = Π_{i∈η} δ^i_u Ξ_{s,t}` with
/// `δ^i_u Ξ_{s,t} = Ξ_{s,t} − Ξ_{s,π^i_u t} − Ξ_{π^i_u s,t}`; `3^{#η}` terms.
pub fn delta_op(eta: IndexSet, u: &[usize], xi: &dyn TwoPointGerm, s: &[usize], t: &[usize]) -> Result<Vec<f64>> {
    check_order(s, u, t)?;
    let axes: Vec<usize> = eta.axes().collect();
    let mut out = vec![0.0; xi.samples()];
    let terms = 3usize.pow(axes.len() as u32);
    for code in 0..terms {
        let (mut a, mut b) = (s.to_vec(), t.to_vec());
        let mut sign = 1.0;
        let mut c = code;
        for &i in &axes {
            match c % 3 {
                1 => {
                    b[i] = u[i];
                    sign = -sign;
                }
                2 => {
                    a[i] = u[i];
                    sign = -sign;
                }
                _ => {}
            }
            c /= 3;
        }
        for (o, v) in out.iter_mut().zip(xi.eval(&a, &b)) {
            *o += sign * v;
        }
    }
    Ok(out)
}

/// `Σ_{[u,v] ∈ P^θ} Ξ_{u,v}` for the partition splitting every `θ` axis of
/// `[s,t]` into `2^level` equal pieces.
pub fn riemann_sum(xi: &dyn TwoPointGerm, theta: IndexSet, s: &[usize], t: &[usize], level: u32) -> Result<Vec<f64>> {
    let d = s.len();
    check_order(s, s, t)?;
    let pieces = 1usize << level;
    let mut counts = vec![1usize; d];
    let mut width = vec![0usize; d];
    for i in 0..d {
        width[i] = t[i] - s[i];
        if theta.contains(i) {
            if width[i] % pieces != 0 {
                return Err(Error::Resolution(format!(
                    "axis {} of length {} cannot be split into {pieces} grid pieces",
                    i + 1,
                    width[i]
                )));
            }
            counts[i] = pieces;
            width[i] /= pieces;
        }
    }
    let mut out = vec![0.0; xi.samples()];
    Grid::for_each_box(&vec![0; d], &counts, |k| {
        let a: Vec<usize> = (0..d).map(|i| s[i] + k[i] * width[i]).collect();
        let b: Vec<usize> = (0..d).map(|i| a[i] + width[i]).collect();
        for (o, v) in out.iter_mut().zip(xi.eval(&a, &b)) {
            *o += v;
        }
    });
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SewResult {
    /// Riemann sum at the finest level.
    pub value: Vec<f64>,
    pub levels: Vec<u32>,
    /// Largest per-sample change between consecutive levels.
    pub changes: Vec<f64>,
    pub decay: Option<RateFit>,
    pub converged: bool,
}

impl SewResult {
    pub fn log_csv(&self) -> String {
        let mut out = String::from("level,change\n");
        for (l, c) in self.levels.iter().skip(1).zip(&self.changes) {
            out.push_str(&format!("{l},{c:e}\n"));
        }
        out
    }
}

/// `I^θΞ_{s,t}` as the Riemann sums over dyadic refinements of `P^θ`, down to
/// single grid cells, with a Cauchy log.
pub fn sew(xi: &dyn TwoPointGerm, theta: IndexSet, s: &[usize], t: &[usize]) -> Result<SewResult> {
    check_order(s, s, t)?;
    let finest = theta
        .axes()
        .map(|i| (t[i] - s[i]).trailing_zeros().min(usize::BITS - 1))
        .min()
        .unwrap_or(0);
    let mut prev: Option<Vec<f64>> = None;
    let mut changes = Vec::new();
    let mut levels = Vec::new();
    for level in 0..=finest {
        let v = riemann_sum(xi, theta, s, t, level)?;
        if let Some(p) = &prev {
            changes.push(v.iter().zip(p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        }
        levels.push(level);
        prev = Some(v);
    }
    let scales: Vec<f64> = (1..levels.len()).map(|k| 0.5f64.powi(k as i32)).collect();
    let positive: Vec<(f64, f64)> = scales.iter().copied().zip(changes.iter().copied()).filter(|p| p.1 > 0.0).collect();
    let decay = if positive.len() >= 4 {
        let (a, b): (Vec<f64>, Vec<f64>) = positive.into_iter().unzip();
        fit_rate(&a, &b).ok()
    } else {
        None
    };
    let converged = match (&decay, changes.first(), changes.last()) {
        (Some(f), _, _) => f.slope > 0.0,
        (None, Some(a), Some(b)) => b <= a,
        _ => true,
    };
    Ok(SewResult { value: prev.unwrap_or_default(), levels, changes, decay, converged })
}

/// `I^θΞ_{x,t}` at grid resolution for every corner `t ≥ x`, as a corner field
/// that vanishes below `x`: partial sums along the `θ` axes of
/// `Ξ_{a(t), b(t)}`, where `a, b` are the lower and upper corners of the cell
/// ending at `t` on `θ` and equal `x, t` on the other axes.
pub fn sewing_field(xi: &dyn TwoPointGerm, theta: IndexSet, x: &[usize]) -> Result<GridField> {
    let g = xi.grid();
    let d = g.d;
    let m = xi.samples();
    if x.len() != d || x.iter().any(|&v| v > g.n) {
        return invalid("base point outside the grid");
    }
    let mut out = GridField::zeros(g, m, FieldKind::CornerValues);
    let hi: Vec<usize> = vec![g.n + 1; d];
    Grid::for_each_box(x, &hi, |t| {
        if theta.axes().any(|i| t[i] == x[i]) {
            return;
        }
        let a: Vec<usize> = (0..d).map(|i| if theta.contains(i) { t[i] - 1 } else { x[i] }).collect();
        let p = g.corner_index(t);
        out.data[p * m..(p + 1) * m].copy_from_slice(&xi.eval(&a, t));
    });
    let side = g.n + 1;
    for axis in theta.axes() {
        let stride = side.pow((d - 1 - axis) as u32);
        Grid::for_each_box(x, &hi, |t| {
            if t[axis] <= x[axis] + 1 {
                return;
            }
            let p = g.corner_index(t);
            let q = p - stride;
            for k in 0..m {
                out.data[p * m + k] += out.data[q * m + k];
            }
        });
    }
    Ok(out)
}

/// The germ `F_x = ∂^{[d]}Ξ_{x,·}`, paired by summation by parts on the grid:
/// `F_x(ψ) = Σ_c □^{[d]}_c Ξ_{x,·} · avg_c ψ`.
pub struct SewingGerm<'a> {
    pub xi: &'a dyn TwoPointGerm,
}

impl SewingGerm<'_> {
    fn cell_increment(&self, x: &[usize], lo: &[usize], hi: &[usize]) -> Vec<f64> {
        let d = lo.len();
        let mut out = vec![0.0; self.xi.samples()];
        for (sign, corner) in crate::increments::corners(IndexSet::full(d).expect("valid dimension"), lo, hi) {
            for (o, v) in out.iter_mut().zip(self.xi.eval(x, &corner)) {
                *o += sign * v;
            }
        }
        out
    }
}

impl Germ for SewingGerm<'_> {
    fn grid(&self) -> Grid {
        self.xi.grid()
    }

    fn samples(&self) -> usize {
        self.xi.samples()
    }

    fn eval(&self, x: &[usize], psi: &TestFunction) -> Result<Vec<f64>> {
        let g = self.grid();
        let mut out = vec![0.0; self.samples()];
        for (c, w) in psi.grid_averages(&g)? {
            let lo = g.cell_multi(c);
            let hi: Vec<usize> = lo.iter().map(|i| i + 1).collect();
            for (o, v) in out.iter_mut().zip(self.cell_increment(x, &lo, &hi)) {
                *o += w * v;
            }
        }
        Ok(out)
    }

    fn eval_block(&self, x: &[usize], n: &[u32], k: &[usize]) -> Result<Vec<f64>> {
        let g = self.grid();
        let level = g.level();
        if n.iter().any(|&v| v as i32 > level) {
            return Err(Error::Resolution(format!("block level {n:?} finer than grid level {level}")));
        }
        let lo: Vec<usize> = (0..g.d).map(|a| k[a] << (level as u32 - n[a])).collect();
        let hi: Vec<usize> = (0..g.d).map(|a| (k[a] + 1) << (level as u32 - n[a])).collect();
        let norm: f64 = n.iter().map(|&v| ((1u64 << v) as f64).sqrt()).product();
        Ok(self.cell_increment(x, &lo, &hi).into_iter().map(|v| norm * v).collect())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BridgeReport {
    /// `R^θ_x(ψ)` per sample from the germ `∂^{[d]}Ξ_{x,·}`.
    pub reconstruction: Vec<f64>,
    /// `⟨∂^{[d]} I^θΞ_{x,·}, ψ⟩` per sample.
    pub sewing: Vec<f64>,
    /// `‖reconstruction − sewing‖_{L_2} / ‖sewing‖_{L_2}`.
    pub relative_difference: f64,
}

/// Compares the reconstruction of `∂^{[d]}Ξ_{x,·}` with the derivative of the
/// sewing, both at the grid level. `ψ` must be supported in `(x, T]`.
pub fn sewing_reconstruction_bridge(
    xi: &dyn TwoPointGerm,
    basis: &WaveletBasisD,
    theta: IndexSet,
    x: &[usize],
    psi: &TestFunction,
) -> Result<BridgeReport> {
    let g = xi.grid();
    let xf = g.corner_coords(x);
    let (lo, _) = psi.support();
    if lo.iter().zip(&xf).any(|(l, v)| l <= v) {
        return invalid("the test function must be supported strictly above the base point");
    }
    let germ = SewingGerm { xi };
    let n = vec![g.level().max(0) as u32; g.d];
    let reconstruction = partial_sum(&germ, theta, &xf, psi, &n, basis)?;
    let field = sewing_field(xi, theta, x)?;
    let mut masses = GridField::zeros(g, field.samples, FieldKind::CellDensity);
    let full = IndexSet::full(g.d)?;
    for c in 0..g.cell_count() {
        let lo = g.cell_multi(c);
        let hi: Vec<usize> = lo.iter().map(|i| i + 1).collect();
        masses.at_mut(c).copy_from_slice(&field.increment(full, &lo, &hi));
    }
    let sewing = psi.pair_cells(&masses)?;
    let relative_difference = relative(&reconstruction, &sewing);
    Ok(BridgeReport { reconstruction, sewing, relative_difference })
}

/// `‖a − b‖_{L_2} / ‖b‖_{L_2}` over samples.
pub fn relative(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

/// Largest `|δ^i_u I^θΞ_{s,t}|` over `i ∈ θ`, with `u` the grid point nearest the midpoint.
pub fn additivity_residual(xi: &dyn TwoPointGerm, theta: IndexSet, s: &[usize], t: &[usize]) -> Result<f64> {
    let u: Vec<usize> = s.iter().zip(t).map(|(a, b)| (a + b) / 2).collect();
    let integral = SewnGerm { xi, theta };
    let mut worst = 0.0f64;
    for i in theta.axes() {
        let v = delta_op(IndexSet::singleton(i, s.len())?, &u, &integral, s, t)?;
        worst = v.iter().fold(worst, |w, x| w.max(x.abs()));
    }
    Ok(worst)
}

/// `(s,t) ↦ I^θΞ_{s,t}` at grid resolution, itself a two-point germ.
pub struct SewnGerm<'a> {
    pub xi: &'a dyn TwoPointGerm,
    pub theta: IndexSet,
}

impl TwoPointGerm for SewnGerm<'_> {
    fn grid(&self) -> Grid {
        self.xi.grid()
    }

    fn samples(&self) -> usize {
        self.xi.samples()
    }

    fn eval(&self, s: &[usize], t: &[usize]) -> Vec<f64> {
        if (0..s.len()).any(|i| s[i] > t[i]) {
            return vec![0.0; self.samples()];
        }
        let d = s.len();
        let mut out = vec![0.0; self.samples()];
        let lo: Vec<usize> = (0..d).map(|i| if self.theta.contains(i) { s[i] } else { 0 }).collect();
        let hi: Vec<usize> = (0..d).map(|i| if self.theta.contains(i) { t[i] } else { 1 }).collect();
        Grid::for_each_box(&lo, &hi, |k| {
            let a: Vec<usize> = (0..d).map(|i| if self.theta.contains(i) { k[i] } else { s[i] }).collect();
            let b: Vec<usize> = (0..d).map(|i| if self.theta.contains(i) { k[i] + 1 } else { t[i] }).collect();
            for (o, v) in out.iter_mut().zip(self.xi.eval(&a, &b)) {
                *o += v;
            }
        });
        out
    }
}

/// Conditioning context for germs built from noise.
pub struct SewingConditioning<'a> {
    pub noise: &'a NoiseSample,
    pub rebuild: &'a (dyn Fn(&NoiseSample) -> Result<Box<dyn TwoPointGerm>> + Sync),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SewingScalingRow {
    pub theta: IndexSet,
    pub eta: IndexSet,
    pub axis: usize,
    pub widths: Vec<f64>,
    pub values: Vec<Estimate>,
    pub fit: Option<RateFit>,
    /// Expected slope; `None` where the entry must vanish.
    pub predicted: Option<f64>,
    pub zero_score: f64,
}

/// Exponents `(α, β, γ)` of a germ coherent in the sewing sense; `γ = ∞`
/// marks conditioned entries that vanish.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SewingExponents {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl SewingExponents {
    fn predict(&self, theta: IndexSet, eta: IndexSet, axis: usize) -> Option<f64> {
        if eta.axes().any(|i| self.gamma[i].is_infinite()) {
            return None;
        }
        let base = if theta.contains(axis) { self.beta[axis] } else { self.alpha[axis] };
        Some(base + if eta.contains(axis) { self.gamma[axis] } else { 0.0 })
    }
}

/// Which quantity a scaling study measures.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SewingQuantity {
    /// `Σ_{θ̂⊆θ} (−1)^{#θ̂} I^{θ̂}Ξ_{s,t}`.
    Remainder,
    /// `δ^θ_u Ξ_{s,t}` at the midpoint `u`.
    Delta,
}

/// Per-axis fits of `‖E^η_s Q_{s,s+w}‖_m` against the width `w` on one axis,
/// the other axes held at the largest width. `widths` are in grid cells,
/// largest first.
pub fn sewing_scaling(
    xi: &dyn TwoPointGerm,
    quantity: SewingQuantity,
    s: &[usize],
    widths: &[usize],
    exponents: &SewingExponents,
    m: f64,
    cond: Option<&SewingConditioning>,
) -> Result<Vec<SewingScalingRow>> {
    let g = xi.grid();
    let d = g.d;
    let wide = *widths.iter().max().ok_or_else(|| Error::InvalidArgument("no widths".into()))?;
    if s.iter().any(|&v| v + wide > g.n) {
        return invalid("the widest box leaves the grid");
    }
    let eval = |germ: &dyn TwoPointGerm, theta: IndexSet, t: &[usize]| -> Result<Vec<f64>> {
        match quantity {
            SewingQuantity::Remainder => {
                let mut out = vec![0.0; germ.samples()];
                for sub in theta.subsets() {
                    let sign = if sub.len() % 2 == 0 { 1.0 } else { -1.0 };
                    let v = SewnGerm { xi: germ, theta: sub }.eval(s, t);
                    out.iter_mut().zip(v).for_each(|(o, x)| *o += sign * x);
                }
                Ok(out)
            }
            SewingQuantity::Delta => {
                let u: Vec<usize> = s.iter().zip(t).map(|(a, b)| (a + b) / 2).collect();
                delta_op(theta, &u, germ, s, t)
            }
        }
    };
    let sf = g.corner_coords(s);
    let h = g.spacing();
    let mut rows = Vec::new();
    for theta in IndexSet::full(d)?.subsets().into_iter().skip(1) {
        for eta in theta.subsets() {
            let masked = match (eta.is_empty(), cond) {
                (true, _) => None,
                (false, Some(c)) => Some((c.rebuild)(&zero_outside(c.noise, &FiltrationMask::new(eta, &sf)?))?),
                (false, None) => return Err(Error::Unsupported("conditioned entries need the noise".into())),
            };
            let germ: &dyn TwoPointGerm = masked.as_deref().unwrap_or(xi);
            for axis in 0..d {
                let mut values = Vec::new();
                for &w in widths {
                    let t: Vec<usize> = (0..d).map(|i| s[i] + if i == axis { w } else { wide }).collect();
                    values.push(lm_norm(&eval(germ, theta, &t)?, m));
                }
                let scales: Vec<f64> = widths.iter().map(|&w| w as f64 * h).collect();
                let vals: Vec<f64> = values.iter().map(|e| e.value).collect();
                let fit = fit_rate(&scales, &vals).ok();
                let unconditioned = if eta.is_empty() {
                    vals.clone()
                } else {
                    let mut v = Vec::new();
                    for &w in widths {
                        let t: Vec<usize> = (0..d).map(|i| s[i] + if i == axis { w } else { wide }).collect();
                        v.push(lm_norm(&eval(xi, theta, &t)?, m).value);
                    }
                    v
                };
                let zero_score = values
                    .iter()
                    .zip(&unconditioned)
                    .map(|(e, u)| e.value.abs() / e.se.max(1e-12 * u))
                    .fold(0.0, f64::max);
                rows.push(SewingScalingRow {
                    theta,
                    eta,
                    axis,
                    widths: scales,
                    values,
                    fit,
                    predicted: exponents.predict(theta, eta, axis),
                    zero_score,
                });
            }
        }
    }
    Ok(rows)
}

/// Rows whose slope misses the prediction by more than `tol`, or whose
/// vanishing entries are not statistically zero.
pub fn scaling_failures(rows: &[SewingScalingRow], tol: f64) -> Vec<&SewingScalingRow> {
    rows.iter()
        .filter(|r| match r.predicted {
            Some(p) => r.fit.as_ref().is_none_or(|f| (f.slope - p).abs() > tol),
            None => r.zero_score > 4.0,
        })
        .collect()
}

/// Reconstruction-side counterpart of the δ-scaling: fits of
/// `‖□^θ_{x,y}F(ψ)‖_m` with `F = ∂^{[d]}Ξ`, `y = x + w·1_θ` and `ψ` the bump on
/// `[y, y + w]` (unnormalized), varying `w` on one axis with the others at the
/// largest width. With `|x−y|` tied to the bump width the slope is the sewing
/// exponent `β` on `θ` axes and `α` elsewhere.
pub fn dual_coherence_scaling(
    xi: &dyn TwoPointGerm,
    theta: IndexSet,
    x: &[usize],
    widths: &[usize],
    m: f64,
) -> Result<Vec<(usize, RateFit)>> {
    let g = xi.grid();
    let d = g.d;
    let wide = *widths.iter().max().ok_or_else(|| Error::InvalidArgument("no widths".into()))?;
    if x.iter().any(|&v| v + 2 * wide > g.n) {
        return invalid("the widest configuration leaves the grid");
    }
    let germ = SewingGerm { xi };
    let level = g.level().max(0) as u32;
    let h = g.spacing();
    let mut out = Vec::new();
    for axis in 0..d {
        let mut values = Vec::new();
        for &w in widths {
            let lam: Vec<usize> = (0..d).map(|i| if i == axis { w } else { wide }).collect();
            let y: Vec<usize> = (0..d).map(|i| x[i] + if theta.contains(i) { lam[i] } else { 0 }).collect();
            let lo = g.corner_coords(&y);
            let hi: Vec<f64> = (0..d).map(|i| lo[i] + lam[i] as f64 * h).collect();
            let psi = TestFunction::bump_on(level, &lo, &hi)?;
            let mut acc = vec![0.0; xi.samples()];
            for (sign, corner) in crate::increments::corners(theta, x, &y) {
                acc.iter_mut().zip(germ.eval(&corner, &psi)?).for_each(|(a, v)| *a += sign * v);
            }
            values.push(lm_norm(&acc, m).value);
        }
        let scales: Vec<f64> = widths.iter().map(|&w| w as f64 * h).collect();
        out.push((axis, fit_rate(&scales, &values)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{brownian_sheet, sample_white_noise};

    struct Quadratic;

    impl TwoPointGerm for Quadratic {
        fn grid(&self) -> Grid {
            Grid::new(1, 16, 1.0).unwrap()
        }
        fn samples(&self) -> usize {
            1
        }
        fn eval(&self, s: &[usize], t: &[usize]) -> Vec<f64> {
            let w = (t[0] as f64 - s[0] as f64) / 16.0;
            vec![w * w]
        }
    }

    #[test]
    fn delta_of_square_increment() {
        let v = delta_op(IndexSet::full(1).unwrap(), &[5], &Quadratic, &[2], &[12]).unwrap();
        let (us, tu) = (3.0 / 16.0, 7.0 / 16.0);
        assert!((v[0] - 2.0 * us * tu).abs() < 1e-15);
    }

    #[test]
    fn additive_germ_sews_to_itself() {
        let noise = sample_white_noise(16, 1.0, 2, 3, 1).unwrap();
        let xi = AdditiveGerm { a: brownian_sheet(&noise).unwrap() };
        let full = IndexSet::full(2).unwrap();
        let r = sew(&xi, full, &[2, 4], &[10, 12]).unwrap();
        let direct = xi.eval(&[2, 4], &[10, 12]);
        for (a, b) in r.value.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(delta_op(full, &[5, 7], &xi, &[2, 4], &[10, 12]).unwrap().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn squared_smooth_increments_sew_to_zero_at_rate_two() {
        let z = GridField::from_corner_fn(Grid::new(2, 256, 1.0).unwrap(), |x| (x[0] * x[1] + x[0]).sin());
        let xi = SquaredIncrementGerm { z };
        let full = IndexSet::full(2).unwrap();
        let sums: Vec<f64> = (4..=8).map(|l| riemann_sum(&xi, full, &[0, 0], &[256, 256], l).unwrap()[0]).collect();
        let scales: Vec<f64> = (4..=8).map(|l| 0.5f64.powi(l)).collect();
        let fit = fit_rate(&scales, &sums).unwrap();
        assert!((fit.slope - 2.0).abs() < 0.05, "{}", fit.slope);
        assert!(sew(&xi, full, &[0, 0], &[256, 256]).unwrap().value[0] < 1e-4);
    }

    #[test]
    fn sewing_field_matches_riemann_sums() {
        let noise = sample_white_noise(16, 1.0, 2, 2, 6).unwrap();
        let b = brownian_sheet(&noise).unwrap();
        let xi = FrozenIncrementGerm::new(b.clone(), b).unwrap();
        for theta in IndexSet::full(2).unwrap().subsets() {
            let f = sewing_field(&xi, theta, &[2, 4]).unwrap();
            let direct = SewnGerm { xi: &xi, theta }.eval(&[2, 4], &[9, 13]);
            let got = f.corner(&[9, 13]);
            if theta.is_empty() {
                continue;
            }
            for (a, b) in got.iter().zip(&direct) {
                assert!((a - b).abs() < 1e-12, "{theta}: {a} vs {b}");
            }
        }
    }
}
