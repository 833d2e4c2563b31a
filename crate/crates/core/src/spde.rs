//! Mixed hyperbolic SPDE
//! `u(x) = I(v)(x) + ∫_0^x R(σ(u)·ξ + (f u)·∂^{[d]}Z)(dy)`
//! solved by Picard iteration with the left-point rule, optionally on patches.

use serde::{Deserialize, Serialize};

use crate::calculus::{ito_product, young_product, CellMeasure, DeclaredClass, RandomDistribution, Reconstructed};
use crate::error::{invalid, Error, Result};
use crate::grid::{FieldKind, Grid, GridField};
use crate::holder::{fit_axis_exponents, stochastic_seminorms, HolderParams, Sampling, SeminormTable};
use crate::increments::IndexSet;
use crate::noise::{deterministic_driver_seeded, zero_outside, DriverKind, FiltrationMask, NoiseSample};
use crate::stats::{fit_rate, RateFit};
use crate::wavelets::WaveletBasisD;

use std::sync::Arc;

/// Lipschitz diffusion coefficient.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diffusion {
    Constant { c: f64 },
    /// `a + b u`.
    Affine { a: f64, b: f64 },
    /// `a + b sin u`.
    Sine { a: f64, b: f64 },
}

impl Diffusion {
    pub fn eval(&self, u: f64) -> f64 {
        match *self {
            Diffusion::Constant { c } => c,
            Diffusion::Affine { a, b } => a + b * u,
            Diffusion::Sine { a, b } => a + b * u.sin(),
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match *self {
            Diffusion::Constant { .. } => 0.0,
            Diffusion::Affine { b, .. } | Diffusion::Sine { b, .. } => b.abs(),
        }
    }

    /// Whether `σ(u)ξ` is affine in every noise cell for adapted `u`.
    fn keeps_affinity(&self) -> bool {
        !matches!(self, Diffusion::Sine { b, .. } if *b != 0.0)
    }
}

/// Boundary datum on the faces through 0, `v(x) = c + Σ a_i x_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    pub c: f64,
    pub slopes: Vec<f64>,
}

impl Boundary {
    pub fn constant(d: usize, c: f64) -> Self {
        Self { c, slopes: vec![0.0; d] }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.c + self.slopes.iter().zip(x).map(|(a, v)| a * v).sum::<f64>()
    }
}

/// `I(v)(x) = Σ_{θ ⊊ [d]} (−1)^{1+#θ^c} v(π^θ_x 0)`.
pub fn boundary_term(v: impl Fn(&[f64]) -> f64, x: &[f64]) -> Result<f64> {
    let d = x.len();
    let mut out = 0.0;
    for theta in IndexSet::full(d)?.subsets() {
        if theta.is_full() {
            continue;
        }
        let p: Vec<f64> = (0..d).map(|a| if theta.contains(a) { x[a] } else { 0.0 }).collect();
        let sign = if (1 + d - theta.len()) % 2 == 0 { 1.0 } else { -1.0 };
        out += sign * v(&p);
    }
    Ok(out)
}

/// Regularity exponents of the problem, one entry per axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exponents {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub delta: Vec<f64>,
}

impl Exponents {
    pub fn uniform(d: usize, alpha: f64, beta: f64, delta: f64) -> Self {
        Self { alpha: vec![alpha; d], beta: vec![beta; d], delta: vec![delta; d] }
    }

    /// Violated well-posedness conditions, as messages.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for a in 0..self.alpha.len() {
            let (al, be, de) = (self.alpha[a], self.beta[a], self.delta[a]);
            if !(be > 0.5 && be < 1.0) {
                out.push(format!("axis {}: β = {be} outside (1/2, 1)", a + 1));
            }
            if (de - (be - 0.5)).abs() > 1e-12 {
                out.push(format!("axis {}: δ = {de} differs from β − 1/2", a + 1));
            }
            if !(de <= al && al < 0.5) {
                out.push(format!("axis {}: need δ ≤ α < 1/2, got δ = {de}, α = {al}", a + 1));
            }
            if !(al + be + de > 1.0) {
                out.push(format!("axis {}: α + β + δ = {} is not above 1", a + 1, al + be + de));
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct SpdeProblem {
    pub grid: Grid,
    pub boundary: Boundary,
    pub sigma: Diffusion,
    /// Coefficient field `f` (corner values, deterministic or one value per sample).
    pub f: GridField,
    /// Deterministic driver `Z` (corner values).
    pub z: GridField,
    pub exponents: Exponents,
}

impl SpdeProblem {
    /// Checks shapes; the exponent conditions are enforced unless `enforce` is false,
    /// in which case they are returned as warnings.
    pub fn new(
        boundary: Boundary,
        sigma: Diffusion,
        f: GridField,
        z: GridField,
        exponents: Exponents,
        enforce: bool,
    ) -> Result<(Self, Vec<String>)> {
        let grid = z.grid;
        let d = grid.d;
        if f.grid != grid || f.kind != FieldKind::CornerValues || z.kind != FieldKind::CornerValues {
            return invalid("f and Z must be corner fields on the same grid");
        }
        if !z.is_deterministic() {
            return invalid("the driver Z must be deterministic");
        }
        if boundary.slopes.len() != d || exponents.alpha.len() != d || exponents.beta.len() != d || exponents.delta.len() != d {
            return invalid("boundary slopes and exponents need one entry per axis");
        }
        let warnings = exponents.violations();
        if enforce && !warnings.is_empty() {
            return Err(Error::Hypothesis(warnings.join("; ")));
        }
        Ok((Self { grid, boundary, sigma, f, z, exponents }, warnings))
    }

    /// The same problem on a grid coarser by `factor`, by restriction of `f` and `Z`.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        Ok(Self {
            grid: self.grid.coarsen(factor)?,
            boundary: self.boundary.clone(),
            sigma: self.sigma,
            f: self.f.restrict_corners(factor)?,
            z: self.z.restrict_corners(factor)?,
            exponents: self.exponents.clone(),
        })
    }

    /// `I(v)` on every corner.
    pub fn boundary_field(&self) -> Result<GridField> {
        let g = self.grid;
        let mut out = GridField::zeros(g, 1, FieldKind::CornerValues);
        for p in 0..g.corner_count() {
            out.data[p] = boundary_term(|x| self.boundary.eval(x), &g.corner_coords(&g.corner_multi(p)))?;
        }
        Ok(out)
    }

    fn driver_masses(&self) -> Vec<f64> {
        let g = self.grid;
        let full = IndexSet::full(g.d).expect("valid dimension");
        (0..g.cell_count())
            .map(|c| {
                let lo = g.cell_multi(c);
                let hi: Vec<usize> = lo.iter().map(|i| i + 1).collect();
                self.z.increment(full, &lo, &hi)[0]
            })
            .collect()
    }
}

/// Serializable description of a problem, used by configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub n: usize,
    #[serde(default = "one")]
    pub t: f64,
    #[serde(default = "two")]
    pub d: usize,
    pub sigma: Diffusion,
    pub boundary: Boundary,
    pub coefficient: Coefficient,
    pub driver: DriverKind,
    #[serde(default)]
    pub driver_seed: Option<u64>,
    pub exponents: Exponents,
    #[serde(default = "yes")]
    pub enforce: bool,
}

fn one() -> f64 {
    1.0
}

fn two() -> usize {
    2
}

fn yes() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Coefficient {
    Constant { c: f64 },
    /// `amp · cos(Σ x_i)`.
    Cosine { amp: f64 },
}

impl ProblemSpec {
    /// The default mixed regime: σ = ½ + ½ sin u, f = ½ cos(x₁+x₂), v = 1 + x₁ + x₂,
    /// Z a frozen fBm sheet with H = 0.75, α = 0.45, β = 0.75, δ = 0.25.
    pub fn default_regime(n: usize) -> Self {
        Self {
            n,
            t: 1.0,
            d: 2,
            sigma: Diffusion::Sine { a: 0.5, b: 0.5 },
            boundary: Boundary { c: 1.0, slopes: vec![1.0, 1.0] },
            coefficient: Coefficient::Cosine { amp: 0.5 },
            driver: DriverKind::FrozenFbmSheet { hurst: 0.75 },
            driver_seed: None,
            exponents: Exponents::uniform(2, 0.45, 0.75, 0.25),
            enforce: true,
        }
    }

    pub fn build(&self) -> Result<(SpdeProblem, Vec<String>)> {
        let grid = Grid::new(self.d, self.n, self.t)?;
        let f = match self.coefficient {
            Coefficient::Constant { c } => GridField::from_corner_fn(grid, |_| c),
            Coefficient::Cosine { amp } => GridField::from_corner_fn(grid, |x| amp * x.iter().sum::<f64>().cos()),
        };
        let z = deterministic_driver_seeded(self.driver, grid, self.driver_seed.unwrap_or(crate::noise::DRIVER_SEED))?;
        SpdeProblem::new(self.boundary.clone(), self.sigma, f, z, self.exponents.clone(), self.enforce)
    }
}

/// Number of patches per axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Patching {
    Off,
    Fixed(usize),
    /// Doubles the patch count until every patch contracts with ratio below ½, up to 16.
    Auto,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub patching: Patching,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 200, patching: Patching::Auto }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub patch: Vec<usize>,
    pub iteration: usize,
    /// `sup_x ‖u_{k+1}(x) − u_k(x)‖_{L_2}` over the patch.
    pub difference: f64,
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SpdeSolution {
    pub u: GridField,
    pub log: Vec<IterationRecord>,
    pub patches: usize,
    /// Largest first-step contraction ratio over the patches.
    pub contraction: f64,
    pub converged: bool,
}

impl SpdeSolution {
    pub fn log_csv(&self) -> String {
        let mut out = String::from("patch,iteration,difference,ratio\n");
        for r in &self.log {
            let patch: Vec<String> = r.patch.iter().map(|v| v.to_string()).collect();
            let ratio = r.ratio.map_or(String::new(), |v| format!("{v:e}"));
            out.push_str(&format!("{},{},{:e},{}\n", patch.join(":"), r.iteration, r.difference, ratio));
        }
        out
    }
}

fn check_noise(problem: &SpdeProblem, noise: &NoiseSample) -> Result<usize> {
    if noise.grid() != problem.grid {
        return invalid("noise and problem grids differ");
    }
    let m = noise.samples();
    if problem.f.samples != 1 && problem.f.samples != m {
        return invalid("f must be deterministic or have one value per noise sample");
    }
    Ok(m)
}

/// One application of the solution map on the whole domain (Haar path):
/// `u_{k+1}(x) = I(v)(x) + Σ_{c ≤ x} [σ(u_k(c⁻)) ΔW_c + f(c⁻) u_k(c⁻) □Z_c]`, `c⁻`
/// the lower-left corner of cell `c`.
pub fn picard_step(u: &GridField, problem: &SpdeProblem, noise: &NoiseSample) -> Result<GridField> {
    let m = check_noise(problem, noise)?;
    if u.grid != problem.grid || u.kind != FieldKind::CornerValues || (u.samples != m && u.samples != 1) {
        return invalid("iterate shape does not match the problem");
    }
    let g = problem.grid;
    let dz = problem.driver_masses();
    let mut masses = GridField::zeros(g, m, FieldKind::CellDensity);
    for c in 0..g.cell_count() {
        let p = g.corner_index(&g.cell_multi(c));
        for s in 0..m {
            let uv = u.value(p, s);
            masses.data[c * m + s] =
                problem.sigma.eval(uv) * noise.cells.data[c * m + s] + problem.f.value(p, s) * uv * dz[c];
        }
    }
    let cum = masses.cumulative()?;
    cum.zip_with(&problem.boundary_field()?, |a, b| a + b)
}

/// The same step through the germ machinery: the primitive of the
/// reconstruction of `σ(u)·ξ + (f u)·∂Z`, with the given basis.
pub fn picard_step_reconstructed(u: &GridField, problem: &SpdeProblem, noise: &NoiseSample, basis: &WaveletBasisD) -> Result<GridField> {
    check_noise(problem, noise)?;
    let ex = &problem.exponents;
    let u_class = DeclaredClass { alpha: ex.alpha.clone(), delta: ex.delta.clone(), m: 2.0 };
    let sigma_u = u.map(|v| problem.sigma.eval(v));
    let walsh = ito_product(&sigma_u, &u_class, noise, true)?;
    let fu = problem.f.zip_with(u, |a, b| a * b)?;
    let zeta = CellMeasure::derivative(&problem.z, ex.beta.iter().copied().fold(1.0, f64::min))?;
    let young = young_product(&fu, &u_class, &zeta, true)?;
    let mut total = GridField::zeros(problem.grid, noise.samples(), FieldKind::CellDensity);
    for germ in [Arc::new(walsh) as Arc<dyn crate::reconstruction::Germ>, Arc::new(young)] {
        let r = Reconstructed::new(germ, basis.clone());
        let masses = r.cell_masses()?;
        total = total.zip_with(&masses, |a, b| a + b)?;
    }
    total.cumulative()?.zip_with(&problem.boundary_field()?, |a, b| a + b)
}

struct PatchRun {
    log: Vec<IterationRecord>,
    first_ratio: f64,
    converged: bool,
}

/// Solves by Picard iteration on `np^d` patches in lexicographic order. Each
/// patch starts from `b(x) = Σ_{θ⊊[d]} (−1)^{1+#θ^c} u(π^θ_x a)`, `a` its lower
/// corner, so that only already-known values on its lower faces are used.
fn solve_with(problem: &SpdeProblem, noise: &NoiseSample, np: usize, tol: f64, max_iter: usize) -> Result<SpdeSolution> {
    let m = check_noise(problem, noise)?;
    let g = problem.grid;
    let d = g.d;
    if np == 0 || g.n % np != 0 {
        return invalid(format!("{np} patches per axis do not divide N = {}", g.n));
    }
    let side = g.n / np;
    let dz = problem.driver_masses();
    let bf = problem.boundary_field()?;
    let mut u = GridField::zeros(g, m, FieldKind::CornerValues);
    for p in 0..g.corner_count() {
        if g.corner_multi(p).contains(&0) {
            u.data[p * m..(p + 1) * m].fill(bf.data[p]);
        }
    }
    let proper: Vec<IndexSet> = IndexSet::full(d)?.subsets().into_iter().filter(|t| !t.is_full()).collect();
    let lside = side + 1;
    let local_count = lside.pow(d as u32);
    let local_multi = |mut flat: usize| -> Vec<usize> {
        let mut idx = vec![0; d];
        for a in (0..d).rev() {
            idx[a] = flat % lside;
            flat /= lside;
        }
        idx
    };
    let local_index = |idx: &[usize]| idx.iter().fold(0, |acc, &i| acc * lside + i);

    let mut log = Vec::new();
    let mut contraction = 0.0f64;
    let mut converged = true;
    let mut err = None;
    Grid::for_each_box(&vec![0; d], &vec![np; d], |q| {
        if err.is_some() {
            return;
        }
        let a: Vec<usize> = q.iter().map(|k| k * side).collect();
        // Start value from the lower faces.
        let mut start = vec![0.0; local_count * m];
        for l in 0..local_count {
            let li = local_multi(l);
            let x: Vec<usize> = (0..d).map(|i| a[i] + li[i]).collect();
            for &theta in &proper {
                let sign = if (1 + d - theta.len()) % 2 == 0 { 1.0 } else { -1.0 };
                let corner: Vec<usize> = (0..d).map(|i| if theta.contains(i) { x[i] } else { a[i] }).collect();
                let src = u.corner(&corner);
                for s in 0..m {
                    start[l * m + s] += sign * src[s];
                }
            }
        }
        match run_patch(problem, noise, &dz, &a, side, &start, tol, max_iter, &local_index) {
            Ok((values, run)) => {
                for l in 0..local_count {
                    let li = local_multi(l);
                    let x: Vec<usize> = (0..d).map(|i| a[i] + li[i]).collect();
                    let p = g.corner_index(&x);
                    u.data[p * m..(p + 1) * m].copy_from_slice(&values[l * m..(l + 1) * m]);
                }
                contraction = contraction.max(run.first_ratio);
                converged &= run.converged;
                log.extend(run.log.into_iter().map(|mut r| {
                    r.patch = q.to_vec();
                    r
                }));
            }
            Err(e) => err = Some(e),
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    Ok(SpdeSolution { u, log, patches: np, contraction, converged })
}

#[allow(clippy::too_many_arguments)]
fn run_patch(
    problem: &SpdeProblem,
    noise: &NoiseSample,
    dz: &[f64],
    a: &[usize],
    side: usize,
    start: &[f64],
    tol: f64,
    max_iter: usize,
    local_index: &dyn Fn(&[usize]) -> usize,
) -> Result<(Vec<f64>, PatchRun)> {
    let g = problem.grid;
    let d = g.d;
    let m = noise.samples();
    let lside = side + 1;
    let local_count = lside.pow(d as u32);
    // Per local cell: global cell index and lower-left global corner index.
    let cells: Vec<(usize, usize, usize, usize)> = (0..side.pow(d as u32))
        .map(|c| {
            let mut idx = vec![0; d];
            let mut r = c;
            for i in (0..d).rev() {
                idx[i] = r % side;
                r /= side;
            }
            let gx: Vec<usize> = (0..d).map(|i| a[i] + idx[i]).collect();
            let upper: Vec<usize> = idx.iter().map(|i| i + 1).collect();
            (g.cell_index(&gx), g.corner_index(&gx), local_index(&idx), local_index(&upper))
        })
        .collect();
    let mut u = start.to_vec();
    let mut next = vec![0.0; local_count * m];
    let mut log = Vec::new();
    let mut prev_diff: Option<f64> = None;
    let mut first_ratio = 0.0;
    let mut converged = false;
    let mut ratios = Vec::new();
    for it in 0..max_iter {
        next.iter_mut().for_each(|v| *v = 0.0);
        for &(c, p, lower, upper) in &cells {
            for s in 0..m {
                let uv = u[lower * m + s];
                next[upper * m + s] =
                    problem.sigma.eval(uv) * noise.cells.data[c * m + s] + problem.f.value(p, s) * uv * dz[c];
            }
        }
        // Cumulative sums along each axis of the local corner block.
        for axis in 0..d {
            let stride = lside.pow((d - 1 - axis) as u32);
            for l in 0..local_count {
                if (l / stride) % lside == 0 {
                    continue;
                }
                let (lo, hi) = next.split_at_mut(l * m);
                let prev = &lo[(l - stride) * m..(l - stride) * m + m];
                hi[..m].iter_mut().zip(prev).for_each(|(v, q)| *v += q);
            }
        }
        let mut diff = 0.0f64;
        for l in 0..local_count {
            let mut sq = 0.0;
            for s in 0..m {
                let v = next[l * m + s] + start[l * m + s];
                let dv = v - u[l * m + s];
                sq += dv * dv;
                next[l * m + s] = v;
            }
            diff = diff.max((sq / m as f64).sqrt());
        }
        std::mem::swap(&mut u, &mut next);
        let ratio = prev_diff.filter(|&p| p > 0.0).map(|p| diff / p);
        if let Some(r) = ratio {
            if ratios.is_empty() {
                first_ratio = r;
            }
            ratios.push(r);
        }
        log.push(IterationRecord { patch: Vec::new(), iteration: it + 1, difference: diff, ratio });
        prev_diff = Some(diff);
        if diff <= tol {
            converged = true;
            break;
        }
    }
    if !converged && ratios.len() >= 3 && ratios[ratios.len() - 3..].iter().all(|&r| r >= 1.0) {
        let tail: Vec<String> = ratios.iter().rev().take(5).map(|r| format!("{r:.3}")).collect();
        return Err(Error::Diverged(format!("Picard iteration on patch at {a:?} does not contract; last ratios {}", tail.join(", "))));
    }
    Ok((u, PatchRun { log, first_ratio, converged }))
}

/// Picard solve, with patching as requested.
pub fn solve(problem: &SpdeProblem, noise: &NoiseSample, opts: &SolveOptions) -> Result<SpdeSolution> {
    match opts.patching {
        Patching::Off => solve_with(problem, noise, 1, opts.tol, opts.max_iter),
        Patching::Fixed(np) => solve_with(problem, noise, np, opts.tol, opts.max_iter),
        Patching::Auto => {
            let mut np = 1;
            loop {
                let res = solve_with(problem, noise, np, opts.tol, opts.max_iter);
                let ok = matches!(&res, Ok(s) if s.contraction < 0.5);
                if ok || np >= 16 || np * 2 > problem.grid.n {
                    return res;
                }
                np *= 2;
            }
        }
    }
}

/// Solution of the discrete equation by one lexicographic sweep over the
/// corners; the fixed point of [`picard_step`].
pub fn solve_direct(problem: &SpdeProblem, noise: &NoiseSample) -> Result<GridField> {
    let m = check_noise(problem, noise)?;
    let g = problem.grid;
    let d = g.d;
    let dz = problem.driver_masses();
    let bf = problem.boundary_field()?;
    let mut u = GridField::zeros(g, m, FieldKind::CornerValues);
    let mut mass = GridField::zeros(g, m, FieldKind::CornerValues);
    let proper: Vec<IndexSet> = IndexSet::full(d)?.subsets().into_iter().filter(|t| !t.is_full()).collect();
    for p in 0..g.corner_count() {
        if g.corner_multi(p).contains(&0) {
            u.data[p * m..(p + 1) * m].fill(bf.data[p]);
        }
    }
    for p in 0..g.corner_count() {
        let x = g.corner_multi(p);
        if x.contains(&0) {
            continue;
        }
        // Cumulative mass Φ(x) = Φ-increments from the lower neighbours plus the cell below x.
        let lower: Vec<usize> = x.iter().map(|i| i - 1).collect();
        let c = g.cell_index(&lower);
        let q = g.corner_index(&lower);
        for s in 0..m {
            let uv = u.value(q, s);
            let own = problem.sigma.eval(uv) * noise.cells.data[c * m + s] + problem.f.value(q, s) * uv * dz[c];
            let mut acc = own;
            for &theta in &proper {
                let sign = if (1 + d - theta.len()) % 2 == 0 { 1.0 } else { -1.0 };
                let corner: Vec<usize> = (0..d).map(|i| if theta.contains(i) { x[i] } else { lower[i] }).collect();
                acc += sign * mass.corner(&corner)[s];
            }
            mass.data[p * m + s] = acc;
            u.data[p * m + s] = bf.data[p] + acc;
        }
    }
    Ok(u)
}

/// `max |u(x) − u'(x)|` over corners `x ≤ at`, where `u'` is solved from the
/// noise with every cell outside `[0, at]` set to zero.
pub fn adaptedness_residual(problem: &SpdeProblem, noise: &NoiseSample, at: &[usize]) -> Result<f64> {
    let g = problem.grid;
    let u = solve_direct(problem, noise)?;
    let mask = FiltrationMask::new(IndexSet::full(g.d)?, &g.corner_coords(at))?;
    let v = solve_direct(problem, &zero_outside(noise, &mask))?;
    let mut worst = 0.0f64;
    Grid::for_each_box(&vec![0; g.d], &at.iter().map(|i| i + 1).collect::<Vec<_>>(), |x| {
        for (a, b) in u.corner(x).iter().zip(v.corner(x)) {
            worst = worst.max((a - b).abs());
        }
    });
    Ok(worst)
}

/// Empirical Lipschitz ratio of the solution map in sup-`L_2`:
/// `‖S(u) − S(w)‖ / ‖u − w‖`.
pub fn solution_map_lipschitz(problem: &SpdeProblem, noise: &NoiseSample, u: &GridField, w: &GridField) -> Result<f64> {
    let a = picard_step(u, problem, noise)?;
    let b = picard_step(w, problem, noise)?;
    let num = sup_l2(&a, &b)?;
    let den = sup_l2(u, w)?;
    if den == 0.0 {
        return invalid("the two inputs coincide");
    }
    Ok(num / den)
}

/// `sup_x (E|a(x) − b(x)|²)^{1/2}`.
pub fn sup_l2(a: &GridField, b: &GridField) -> Result<f64> {
    let d = a.zip_with(b, |x, y| x - y)?;
    Ok((0..d.points()).map(|p| (d.at(p).iter().map(|v| v * v).sum::<f64>() / d.samples as f64).sqrt()).fold(0.0, f64::max))
}

/// `(mean_x E|a(x) − b(x)|² / mean_x E|b(x)|²)^{1/2}`.
pub fn relative_l2(a: &GridField, b: &GridField) -> Result<f64> {
    let d = a.zip_with(b, |x, y| x - y)?;
    let num: f64 = d.data.iter().map(|v| v * v).sum::<f64>() / d.data.len() as f64;
    let den: f64 = b.data.iter().map(|v| v * v).sum::<f64>() / b.data.len() as f64;
    Ok((num / den).sqrt())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeshStudy {
    pub levels: Vec<usize>,
    /// `sup_x ‖u_N(x) − u_{2N}(x)‖_{L_2}` over the corners of the coarser grid.
    pub differences: Vec<f64>,
    /// Fit of the differences against `h = T/N`; positive slope means convergence.
    pub fit: Option<RateFit>,
}

impl MeshStudy {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,difference\n");
        for (n, d) in self.levels.iter().zip(&self.differences) {
            out.push_str(&format!("{n},{d:e}\n"));
        }
        out
    }
}

/// Solves the problem restricted to each level with coupled noise (coarse
/// cells are sums of fine cells) and fits the self-convergence rate.
pub fn mesh_convergence_study(problem: &SpdeProblem, noise: &NoiseSample, levels: &[usize]) -> Result<MeshStudy> {
    let n = problem.grid.n;
    let mut sorted = levels.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() < 2 || sorted.iter().any(|&l| l == 0 || n % l != 0) {
        return invalid("levels must be at least two divisors of the finest N");
    }
    let mut sols = Vec::new();
    for &l in &sorted {
        let p = problem.coarsen(n / l)?;
        let nz = noise.aggregate(n / l)?;
        sols.push(solve_direct(&p, &nz)?);
    }
    let mut differences = Vec::new();
    for w in 0..sorted.len() - 1 {
        let factor = sorted[w + 1] / sorted[w];
        let fine = sols[w + 1].restrict_corners(factor)?;
        differences.push(sup_l2(&sols[w], &fine)?);
    }
    let scales: Vec<f64> = sorted[..sorted.len() - 1].iter().map(|&l| problem.grid.t / l as f64).collect();
    let fit = fit_rate(&scales, &differences).ok();
    Ok(MeshStudy { levels: sorted[..sorted.len() - 1].to_vec(), differences, fit })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegularityReport {
    pub table: SeminormTable,
    /// Per-θ fitted exponents `(axis, fit)`.
    pub exponents: Vec<(IndexSet, Vec<(usize, RateFit)>)>,
}

/// Seminorm table at the declared `(α, δ)` and fitted increment exponents for every `θ ≠ ∅`.
pub fn regularity_report(u: &GridField, exponents: &Exponents, m: f64, sampling: &Sampling) -> Result<RegularityReport> {
    let d = u.grid.d;
    let params = HolderParams::new(exponents.alpha.clone(), exponents.delta.clone(), m, u.grid.t)?;
    let table = stochastic_seminorms(u, &params, sampling, None)?;
    let mut out = Vec::new();
    for theta in IndexSet::full(d)?.subsets().into_iter().skip(1) {
        out.push((theta, fit_axis_exponents(u, theta, m, sampling)?));
    }
    Ok(RegularityReport { table, exponents: out })
}

/// Whether the discrete solution map is affine in each noise cell.
pub fn cellwise_affine(problem: &SpdeProblem) -> bool {
    problem.sigma.keeps_affinity()
}

impl RegularityReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("theta,axis,slope,r_squared\n");
        for (theta, fits) in &self.exponents {
            for (axis, f) in fits {
                out.push_str(&format!("{theta},{},{:e},{:e}\n", axis + 1, f.slope, f.r_squared));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{brownian_sheet, sample_white_noise};

    fn linear_problem(n: usize, sigma: Diffusion, c: f64) -> SpdeProblem {
        let g = Grid::new(2, n, 1.0).unwrap();
        let f = GridField::from_corner_fn(g, |_| c);
        let z = GridField::from_corner_fn(g, |x| x[0] * x[1]);
        SpdeProblem::new(Boundary::constant(2, 1.0), sigma, f, z, Exponents::uniform(2, 0.45, 0.75, 0.25), true).unwrap().0
    }

    #[test]
    fn boundary_term_in_two_dimensions() {
        let v = |x: &[f64]| 2.0 + x[0] + 3.0 * x[1] + x[0] * x[1];
        let got = boundary_term(v, &[0.3, 0.7]).unwrap();
        assert!((got - (v(&[0.3, 0.0]) + v(&[0.0, 0.7]) - v(&[0.0, 0.0]))).abs() < 1e-15);
    }

    #[test]
    fn additive_noise_gives_the_sheet() {
        let p = linear_problem(16, Diffusion::Constant { c: 1.0 }, 0.0);
        let noise = sample_white_noise(16, 1.0, 2, 8, 4).unwrap();
        let s = solve(&p, &noise, &SolveOptions::default()).unwrap();
        let b = brownian_sheet(&noise).unwrap().map(|v| v + 1.0);
        assert!(sup_l2(&s.u, &b).unwrap() < 1e-12);
    }

    #[test]
    fn patching_and_sweep_agree() {
        let g = Grid::new(2, 32, 1.0).unwrap();
        let spec = ProblemSpec::default_regime(32);
        let (p, _) = spec.build().unwrap();
        let noise = sample_white_noise(32, 1.0, 2, 6, 9).unwrap();
        let a = solve(&p, &noise, &SolveOptions { patching: Patching::Off, ..Default::default() }).unwrap();
        let b = solve(&p, &noise, &SolveOptions { patching: Patching::Fixed(4), ..Default::default() }).unwrap();
        let c = solve_direct(&p, &noise).unwrap();
        assert!(a.converged && b.converged);
        assert!(sup_l2(&a.u, &c).unwrap() < 1e-8);
        assert!(sup_l2(&b.u, &c).unwrap() < 1e-8);
        assert_eq!(a.u.grid, g);
    }

    #[test]
    fn reconstruction_path_matches_fast_step() {
        let (p, _) = ProblemSpec::default_regime(16).build().unwrap();
        let noise = sample_white_noise(16, 1.0, 2, 3, 2).unwrap();
        let u0 = brownian_sheet(&noise).unwrap();
        let a = picard_step(&u0, &p, &noise).unwrap();
        let b = picard_step_reconstructed(&u0, &p, &noise, &WaveletBasisD::haar(2)).unwrap();
        assert!(sup_l2(&a, &b).unwrap() < 1e-8);
    }

    #[test]
    fn solution_is_adapted() {
        let (p, _) = ProblemSpec::default_regime(16).build().unwrap();
        let noise = sample_white_noise(16, 1.0, 2, 4, 5).unwrap();
        assert_eq!(adaptedness_residual(&p, &noise, &[7, 11]).unwrap(), 0.0);
    }
}
