//! Monte Carlo estimates of Hölder-type norms over finite dyadic samplings.
//!
//! Every sup is taken over a finite set of base points and separations, so
//! the reported numbers are lower bounds of the true norms. Rate fits use
//! least squares on `log2` scales.

mod bdg;

pub use bdg::{bdg_check, random_array, random_arrays, ArrayKind, BdgArray, BdgReport, BdgRow};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calculus::RandomDistribution;
use crate::error::{invalid, Error, Result};
use crate::grid::{FieldKind, Grid, GridField};
use crate::increments::IndexSet;
use crate::noise::{conditional_split, zero_outside, CondMode, FiltrationMask, NoiseSample};
use crate::reconstruction::{localized_bump, Germ};
use crate::stats::{fit_rate, lm_norm, split_second_moment, Estimate, RateFit};
use crate::wavelets::TestFunction;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderParams {
    pub alpha: Vec<f64>,
    pub delta: Vec<f64>,
    pub m: f64,
    pub t: f64,
}

impl HolderParams {
    pub fn new(alpha: Vec<f64>, delta: Vec<f64>, m: f64, t: f64) -> Result<Self> {
        if alpha.len() != delta.len() || alpha.is_empty() {
            return invalid("α and δ need one entry per axis");
        }
        if delta.iter().any(|&v| !(v >= 0.0)) {
            return invalid("δ must be non-negative");
        }
        if !(m >= 1.0) {
            return invalid(format!("moment order {m} below 1"));
        }
        if !(t > 0.0) {
            return invalid("domain size must be positive");
        }
        Ok(Self { alpha, delta, m, t })
    }

    pub fn uniform(d: usize, alpha: f64, delta: f64, m: f64, t: f64) -> Result<Self> {
        Self::new(vec![alpha; d], vec![delta; d], m, t)
    }

    fn check_positive(&self) -> Result<()> {
        if self.alpha.iter().any(|&a| !(a > 0.0 && a <= 1.0)) {
            return invalid("field seminorms need 0 < α ≤ 1 on every axis");
        }
        Ok(())
    }

    /// Smallest integer `r` with `r + α_i > 0` on every axis.
    pub fn test_smoothness(&self) -> u32 {
        self.alpha.iter().map(|a| (-a).floor().max(0.0) as u32 + 1).max().unwrap_or(1)
    }
}

/// Finite sampling of the sup: dyadic separations `T 2^{-k}` and pseudo-random base points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub exponents: Vec<u32>,
    pub base_points: usize,
    pub seed: u64,
}

impl Default for Sampling {
    fn default() -> Self {
        Self { exponents: (2..=7).collect(), base_points: 50, seed: 7 }
    }
}

impl Sampling {
    fn separations(&self, grid: &Grid) -> Vec<(u32, usize)> {
        self.exponents
            .iter()
            .filter_map(|&k| {
                let cells = grid.n >> k;
                (k < 63 && cells >= 1 && cells << k == grid.n).then_some((k, cells))
            })
            .collect()
    }

    /// Corner indices in `[0, n − span]^d`. Prefix-stable in `base_points`.
    fn points(&self, grid: &Grid, span: usize) -> Vec<Vec<usize>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let top = grid.n.saturating_sub(span);
        (0..self.base_points).map(|_| (0..grid.d).map(|_| rng.random_range(0..=top)).collect()).collect()
    }
}

/// How to compute `E^η_x` of a quantity built from the noise.
pub struct Conditioning<'a, T> {
    pub noise: &'a NoiseSample,
    pub rebuild: &'a (dyn Fn(&NoiseSample) -> Result<T> + Sync),
    pub mode: CondMode,
    /// Whether every evaluated quantity is affine in each noise cell; required by [`CondMode::Exact`].
    pub affine: bool,
}

impl<T> Conditioning<'_, T> {
    /// Conditioned `L_m` norms of `len` consecutive blocks of the functional's
    /// output, each block holding one value per sample.
    fn norms(&self, mask: &FiltrationMask, m: f64, functional: impl Fn(&T) -> Result<Vec<f64>> + Sync) -> Result<Vec<Estimate>> {
        let samples = self.noise.samples();
        let f = |nz: &NoiseSample| functional(&(self.rebuild)(nz)?);
        match self.mode {
            CondMode::Exact => {
                if !self.affine {
                    return Err(Error::Unsupported("exact conditioning needs a cellwise-affine quantity".into()));
                }
                let v = f(&zero_outside(self.noise, mask))?;
                Ok(v.chunks(samples).map(|c| lm_norm(c, m)).collect())
            }
            CondMode::Resample { k } => {
                let (a, b) = conditional_split(f, mask, self.noise, k)?;
                if (m - 2.0).abs() < f64::EPSILON {
                    Ok(a.chunks(samples).zip(b.chunks(samples)).map(|(x, y)| split_second_moment(x, y)).collect())
                } else {
                    let avg: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
                    Ok(avg.chunks(samples).map(|c| lm_norm(c, m)).collect())
                }
            }
        }
    }
}

/// One sampled entry of a seminorm table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeminormRow {
    pub theta: IndexSet,
    pub eta: IndexSet,
    pub separation: f64,
    /// Sup over base points of the normalized `L_m` norm.
    pub value: Estimate,
    /// Root mean square over base points of the raw `L_m` norm.
    pub raw: f64,
    /// `max |raw|/se` over base points; small when the entry vanishes.
    pub zero_score: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SeminormTable {
    pub rows: Vec<SeminormRow>,
    /// Set when conditioned entries could not be computed and were dropped.
    pub conditioning_unsupported: bool,
}

impl SeminormTable {
    /// Sup over separations of the `(θ, η)` entries.
    pub fn sup(&self, theta: IndexSet, eta: IndexSet) -> Option<f64> {
        self.rows
            .iter()
            .filter(|r| r.theta == theta && r.eta == eta)
            .map(|r| r.value.value)
            .fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.max(v))))
    }

    /// Fit of the normalized entries against the separation. A negative slope
    /// means the ratio grows as the separation shrinks.
    pub fn trend(&self, theta: IndexSet, eta: IndexSet) -> Result<RateFit> {
        let (s, v): (Vec<f64>, Vec<f64>) = self
            .rows
            .iter()
            .filter(|r| r.theta == theta && r.eta == eta)
            .map(|r| (r.separation, r.value.value))
            .unzip();
        fit_rate(&s, &v)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("theta,eta,separation,value,se,raw,zero_score\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:e},{:e},{:e},{:e},{:e}\n",
                r.theta, r.eta, r.separation, r.value.value, r.value.se, r.raw, r.zero_score
            ));
        }
        out
    }
}

fn weight(exps: &[f64], set: IndexSet, s: f64) -> f64 {
    set.axes().map(|i| s.powf(exps[i])).product()
}

fn check_corner_field(f: &GridField, d: usize) -> Result<()> {
    if f.kind != FieldKind::CornerValues {
        return invalid("seminorms need a corner field");
    }
    if f.grid.d != d {
        return invalid("parameter and field dimensions differ");
    }
    Ok(())
}

/// Sup of `|□^θ_{x,y} f| / Π|x_i − y_i|^{α_i}` over sampled dyadic pairs, for every `θ ≠ ∅`.
pub fn deterministic_norm(f: &GridField, alpha: &[f64], sampling: &Sampling) -> Result<SeminormTable> {
    if !f.is_deterministic() {
        return invalid("deterministic seminorms need a single sample");
    }
    let params = HolderParams::new(alpha.to_vec(), vec![0.0; alpha.len()], 2.0, f.grid.t)?;
    stochastic_seminorms(f, &params, sampling, None)
}

/// Table of `‖E^η_x □^θ_{x,y} Y‖_m / (|x−y|^{α_θ} |x−y|^{δ_η})` over `θ ≠ ∅`,
/// `η ⊆ θ` and separations `y − x = s·1_θ`. Without a conditioning context,
/// or when it cannot handle the field, only `η = ∅` rows are produced.
pub fn stochastic_seminorms(
    y: &GridField,
    params: &HolderParams,
    sampling: &Sampling,
    cond: Option<&Conditioning<GridField>>,
) -> Result<SeminormTable> {
    let grid = y.grid;
    let d = grid.d;
    check_corner_field(y, d)?;
    params.check_positive()?;
    let seps = sampling.separations(&grid);
    let span = seps.iter().map(|s| s.1).max().unwrap_or(0);
    let points = sampling.points(&grid, span);
    let h = grid.spacing();
    let thetas: Vec<IndexSet> = IndexSet::full(d)?.subsets().into_iter().skip(1).collect();

    // Per base point: the raw increments of one quantity for every (θ, separation).
    let increments = |field: &GridField, x: &[usize], thetas: &[IndexSet]| -> Vec<f64> {
        let mut out = Vec::new();
        for &theta in thetas {
            for &(_, cells) in &seps {
                let yy: Vec<usize> = x.iter().map(|i| i + cells).collect();
                out.extend(field.increment(theta, x, &yy));
            }
        }
        out
    };

    let mut unsupported = false;
    let mut per_point: Vec<Vec<(IndexSet, IndexSet, Vec<Estimate>)>> = points
        .par_iter()
        .map(|x| {
            let v = increments(y, x, &thetas);
            let norms: Vec<Estimate> = v.chunks(y.samples).map(|c| lm_norm(c, params.m)).collect();
            let mut out = Vec::new();
            for (t, chunk) in thetas.iter().zip(norms.chunks(seps.len().max(1))) {
                out.push((*t, IndexSet::empty(d).expect("valid dimension"), chunk.to_vec()));
            }
            out
        })
        .collect();

    if let Some(ctx) = cond {
        let conditioned: Result<Vec<Vec<(IndexSet, IndexSet, Vec<Estimate>)>>> = points
            .par_iter()
            .map(|x| {
                let xf = grid.corner_coords(x);
                let mut out = Vec::new();
                for eta in IndexSet::full(d)?.subsets().into_iter().skip(1) {
                    let sup: Vec<IndexSet> = thetas.iter().copied().filter(|t| eta.is_subset_of(*t)).collect();
                    let mask = FiltrationMask::new(eta, &xf)?;
                    let norms = ctx.norms(&mask, params.m, |field: &GridField| Ok(increments(field, x, &sup)))?;
                    for (t, chunk) in sup.iter().zip(norms.chunks(seps.len().max(1))) {
                        out.push((*t, eta, chunk.to_vec()));
                    }
                }
                Ok(out)
            })
            .collect();
        match conditioned {
            Ok(c) => per_point.iter_mut().zip(c).for_each(|(p, extra)| p.extend(extra)),
            Err(Error::Unsupported(_)) => unsupported = true,
            Err(e) => return Err(e),
        }
    }

    let mut rows = Vec::new();
    for (j, (theta, eta, _)) in per_point.first().cloned().unwrap_or_default().into_iter().enumerate() {
        for (si, &(_, cells)) in seps.iter().enumerate() {
            let s = cells as f64 * h;
            let w = weight(&params.alpha, theta, s) * weight(&params.delta, eta, s);
            let mut best = Estimate { value: 0.0, se: 0.0 };
            let mut sq = 0.0;
            let mut zero_score = 0.0f64;
            for p in &per_point {
                let e = p[j].2[si];
                if e.value / w >= best.value {
                    best = Estimate { value: e.value / w, se: e.se / w };
                }
                sq += e.value * e.value;
                let floor = 1e-12 * e.value.abs().max(f64::MIN_POSITIVE);
                zero_score = zero_score.max(e.value.abs() / e.se.max(floor));
            }
            rows.push(SeminormRow {
                theta,
                eta,
                separation: s,
                value: best,
                raw: (sq / per_point.len().max(1) as f64).sqrt(),
                zero_score,
            });
        }
    }
    Ok(SeminormTable { rows, conditioning_unsupported: unsupported })
}

/// Per-axis exponent of `‖□^θ_{x,y} Y‖_m` (root mean square over base
/// points): separation `T 2^{-k}` on the fitted axis, the largest sampled
/// separation on the other axes of `θ`.
pub fn fit_axis_exponents(y: &GridField, theta: IndexSet, m: f64, sampling: &Sampling) -> Result<Vec<(usize, RateFit)>> {
    let grid = y.grid;
    check_corner_field(y, theta.dim())?;
    let seps = sampling.separations(&grid);
    let wide = seps.iter().map(|s| s.1).max().ok_or_else(|| Error::InvalidArgument("no usable separations".into()))?;
    let points = sampling.points(&grid, wide);
    let h = grid.spacing();
    theta
        .axes()
        .map(|axis| {
            let values: Vec<f64> = seps
                .par_iter()
                .map(|&(_, cells)| {
                    let sq: f64 = points
                        .iter()
                        .map(|x| {
                            let yy: Vec<usize> = (0..grid.d).map(|a| x[a] + if a == axis { cells } else { wide }).collect();
                            lm_norm(&y.increment(theta, x, &yy), m).value.powi(2)
                        })
                        .sum();
                    (sq / points.len() as f64).sqrt()
                })
                .collect();
            let scales: Vec<f64> = seps.iter().map(|s| s.1 as f64 * h).collect();
            Ok((axis, fit_rate(&scales, &values)?))
        })
        .collect()
}

/// Dyadic scale `λ = T 2^{-k}` with per-axis fits of the mean norm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionRow {
    pub eta: IndexSet,
    /// Axis whose scale varies; the others stay at the largest scale.
    pub axis: usize,
    pub lambdas: Vec<f64>,
    /// Root mean square over base points of `‖E^η_x f(ψ^λ_x)‖_m`.
    pub values: Vec<f64>,
    pub fit: Option<RateFit>,
    pub zero_score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionNorm {
    /// `sup ‖E^η_x f(ψ^λ_x)‖_m / (λ^α λ^δ_η)` over the sampled family.
    pub value: f64,
    pub rows: Vec<DistributionRow>,
    /// Base points dropped because the rescaled support left the domain.
    pub skipped: usize,
    pub conditioning_unsupported: bool,
}

impl DistributionNorm {
    pub fn row(&self, eta: IndexSet, axis: usize) -> Option<&DistributionRow> {
        self.rows.iter().find(|r| r.eta == eta && r.axis == axis)
    }
}

/// Estimate of `‖f‖_{C^{α,δ}L_m}` against rescaled copies `ψ^λ_x` of `psi`
/// (usually [`TestFunction::bump`], supported in `[1/4, 3/4]^d`).
pub fn distribution_norm(
    f: &dyn RandomDistribution,
    psi: &TestFunction,
    params: &HolderParams,
    sampling: &Sampling,
    cond: Option<&Conditioning<Box<dyn RandomDistribution>>>,
) -> Result<DistributionNorm> {
    let grid = f.grid();
    let d = grid.d;
    if psi.dim() != d || params.alpha.len() != d {
        return invalid("test function, parameters and distribution dimensions differ");
    }
    let seps = sampling.separations(&grid);
    let widest = seps.iter().map(|s| s.1).max().ok_or_else(|| Error::InvalidArgument("no usable scales".into()))?;
    let h = grid.spacing();
    let level = grid.level().max(0) as u32 + 3;
    let lam_max = widest as f64 * h;
    let mut skipped = 0;
    let points: Vec<Vec<f64>> = sampling
        .points(&grid, widest)
        .into_iter()
        .map(|x| grid.corner_coords(&x))
        .filter(|x| {
            let ok = x.iter().all(|v| v + lam_max <= params.t + 1e-12);
            if !ok {
                skipped += 1;
            }
            ok
        })
        .collect();
    if skipped > 0 {
        eprintln!("warning: {skipped} base points skipped: rescaled supports leave the domain");
    }
    let etas: Vec<IndexSet> = IndexSet::full(d)?.subsets();
    let lambdas: Vec<f64> = seps.iter().map(|s| s.1 as f64 * h).collect();

    // Test functions per (axis, λ), per base point.
    let family = |x: &[f64]| -> Result<Vec<TestFunction>> {
        let mut out = Vec::new();
        for axis in 0..d {
            for &lam in &lambdas {
                let mut l = vec![lam_max; d];
                l[axis] = lam;
                out.push(psi.rescale_at(x, &l, level)?);
            }
        }
        Ok(out)
    };

    let mut unsupported = false;
    let mut per_point: Vec<Vec<(IndexSet, Vec<Estimate>)>> = Vec::with_capacity(points.len());
    for x in &points {
        let fam = family(x)?;
        let mut entries = Vec::new();
        let raw: Vec<Estimate> = fam
            .par_iter()
            .map(|t| f.pair(t).map(|v| lm_norm(&v, params.m)))
            .collect::<Result<_>>()?;
        entries.push((etas[0], raw));
        if let (Some(ctx), false) = (cond, unsupported) {
            for &eta in etas.iter().skip(1) {
                let mask = FiltrationMask::new(eta, x)?;
                let res = ctx.norms(&mask, params.m, |g: &Box<dyn RandomDistribution>| {
                    let mut v = Vec::new();
                    for t in &fam {
                        v.extend(g.pair(t)?);
                    }
                    Ok(v)
                });
                match res {
                    Ok(n) => entries.push((eta, n)),
                    Err(Error::Unsupported(_)) => {
                        unsupported = true;
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        per_point.push(entries);
    }
    if unsupported {
        per_point.iter_mut().for_each(|p| p.truncate(1));
    }

    let mut value = 0.0f64;
    let mut rows = Vec::new();
    let nl = lambdas.len();
    for (j, (eta, _)) in per_point.first().cloned().unwrap_or_default().into_iter().enumerate() {
        for axis in 0..d {
            let mut values = Vec::with_capacity(nl);
            let mut zero_score = 0.0f64;
            for (li, &lam) in lambdas.iter().enumerate() {
                let mut l = vec![lam_max; d];
                l[axis] = lam;
                let w: f64 = (0..d)
                    .map(|a| l[a].powf(params.alpha[a]) * if eta.contains(a) { l[a].powf(params.delta[a]) } else { 1.0 })
                    .product();
                let mut sq = 0.0;
                for p in &per_point {
                    let e = p[j].1[axis * nl + li];
                    value = value.max(e.value / w);
                    sq += e.value * e.value;
                    let floor = 1e-12 * e.value.abs().max(f64::MIN_POSITIVE);
                    zero_score = zero_score.max(e.value.abs() / e.se.max(floor));
                }
                values.push((sq / per_point.len().max(1) as f64).sqrt());
            }
            let fit = fit_rate(&lambdas, &values).ok();
            rows.push(DistributionRow { eta, axis, lambdas: lambdas.clone(), values, fit, zero_score });
        }
    }
    Ok(DistributionNorm { value, rows, skipped, conditioning_unsupported: unsupported })
}

/// Declared exponents of a coherence norm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoherenceParams {
    pub alpha: Vec<f64>,
    pub gamma: Vec<f64>,
    pub delta: Vec<f64>,
    pub m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoherenceRow {
    pub theta: IndexSet,
    pub eta: IndexSet,
    pub separation: f64,
    pub lambda: f64,
    pub value: Estimate,
    pub zero_score: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CoherenceNorm {
    pub value: f64,
    pub rows: Vec<CoherenceRow>,
    pub conditioning_unsupported: bool,
}

impl CoherenceNorm {
    pub fn sup(&self, theta: IndexSet) -> f64 {
        self.rows.iter().filter(|r| r.theta == theta).map(|r| r.value.value).fold(0.0, f64::max)
    }
}

/// Estimate of `‖F‖_{G^{α,γ,δ}L_m}`: sup of
/// `‖E^η_x □^θ_{x,y}F(ψ^λ_y)‖_m / (λ^α (|x−y|+λ)^{γ−α}_θ (|x−y|+λ)^δ_η)`
/// with `y − x = s·1_θ` and `ψ^λ_y` the bump on `y + λ([1/4,3/4]^θ × [−3/4,3/4]^{θ^c})`.
pub fn coherence_norm(
    germ: &dyn Germ,
    params: &CoherenceParams,
    sampling: &Sampling,
    cond: Option<&Conditioning<Box<dyn Germ>>>,
) -> Result<CoherenceNorm> {
    let grid = germ.grid();
    let d = grid.d;
    if params.alpha.len() != d || params.gamma.len() != d || params.delta.len() != d {
        return invalid("coherence exponents need one entry per axis");
    }
    let seps = sampling.separations(&grid);
    let widest = seps.iter().map(|s| s.1).max().ok_or_else(|| Error::InvalidArgument("no usable scales".into()))?;
    let h = grid.spacing();
    let level = grid.level().max(0) as u32 + 2;
    // y ranges over [widest, n − widest] so that x = y − s·1_θ and the bump stay inside.
    let points: Vec<Vec<usize>> = sampling
        .points(&grid, 2 * widest)
        .into_iter()
        .map(|p| p.iter().map(|i| i + widest).collect())
        .collect();
    let thetas: Vec<IndexSet> = IndexSet::full(d)?.subsets().into_iter().skip(1).collect();
    let samples = germ.samples();

    // Every (θ, s, λ) combination evaluated at one base point y.
    let mut combos: Vec<(IndexSet, usize, usize)> = Vec::new();
    for &t in &thetas {
        for &(_, s) in &seps {
            for &(_, l) in &seps {
                combos.push((t, s, l));
            }
        }
    }
    let evaluate = |g: &dyn Germ, yi: &[usize], subset: &[(IndexSet, usize, usize)]| -> Result<Vec<f64>> {
        let yf = grid.corner_coords(yi);
        let mut out = Vec::with_capacity(subset.len() * samples);
        for &(theta, s, l) in subset {
            let psi = localized_bump(theta, &yf, &vec![l as f64 * h; d], level)?;
            let xi: Vec<usize> = (0..d).map(|a| if theta.contains(a) { yi[a] - s } else { yi[a] }).collect();
            let mut acc = vec![0.0; samples];
            for (sign, corner) in crate::increments::corners(theta, &xi, yi) {
                let v = g.eval(&corner, &psi)?;
                for (o, x) in acc.iter_mut().zip(v.iter().cycle()) {
                    *o += sign * x;
                }
            }
            out.extend(acc);
        }
        Ok(out)
    };

    let weight = |theta: IndexSet, eta: IndexSet, s: f64, l: f64| -> f64 {
        (0..d)
            .map(|a| {
                let mut w = l.powf(params.alpha[a]);
                if theta.contains(a) {
                    w *= (s + l).powf(params.gamma[a] - params.alpha[a]);
                }
                if eta.contains(a) {
                    w *= (s + l).powf(params.delta[a]);
                }
                w
            })
            .product()
    };

    let mut unsupported = false;
    let mut rows = Vec::new();
    let mut value = 0.0f64;
    let push = |theta, eta, s: usize, l: usize, e: Estimate, rows: &mut Vec<CoherenceRow>, value: &mut f64| {
        let (sf, lf) = (s as f64 * h, l as f64 * h);
        let w = weight(theta, eta, sf, lf);
        let v = Estimate { value: e.value / w, se: e.se / w };
        *value = value.max(v.value);
        let floor = 1e-12 * e.value.abs().max(f64::MIN_POSITIVE);
        rows.push(CoherenceRow { theta, eta, separation: sf, lambda: lf, value: v, zero_score: e.value.abs() / e.se.max(floor) });
    };
    for yi in &points {
        let raw = evaluate(germ, yi, &combos)?;
        for (c, chunk) in combos.iter().zip(raw.chunks(samples)) {
            push(c.0, IndexSet::empty(d)?, c.1, c.2, lm_norm(chunk, params.m), &mut rows, &mut value);
        }
        let Some(ctx) = cond else { continue };
        if unsupported {
            continue;
        }
        for eta in IndexSet::full(d)?.subsets().into_iter().skip(1) {
            let subset: Vec<(IndexSet, usize, usize)> = combos.iter().copied().filter(|c| eta.is_subset_of(c.0)).collect();
            // Condition at the lower point x, which only differs from y on θ ⊇ η.
            let mut groups: Vec<(usize, Vec<(IndexSet, usize, usize)>)> = Vec::new();
            for c in subset {
                match groups.iter_mut().find(|g| g.0 == c.1) {
                    Some(g) => g.1.push(c),
                    None => groups.push((c.1, vec![c])),
                }
            }
            for (s, group) in groups {
                let xf: Vec<f64> = (0..d).map(|a| (yi[a] - if eta.contains(a) { s } else { 0 }) as f64 * h).collect();
                let mask = FiltrationMask::new(eta, &xf)?;
                match ctx.norms(&mask, params.m, |g: &Box<dyn Germ>| evaluate(g.as_ref(), yi, &group)) {
                    Ok(n) => {
                        for (c, e) in group.iter().zip(n) {
                            push(c.0, eta, c.1, c.2, e, &mut rows, &mut value);
                        }
                    }
                    Err(Error::Unsupported(_)) => {
                        unsupported = true;
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
        }
    }
    if unsupported {
        rows.retain(|r| r.eta.is_empty());
    }
    Ok(CoherenceNorm { value, rows, conditioning_unsupported: unsupported })
}
