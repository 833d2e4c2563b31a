//! Acceptance criteria 1–10. Criteria run one after another (the Monte Carlo
//! fields are large), each printing a single PASS/FAIL line; the test fails
//! if any criterion fails or overruns its time budget.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stochrecon::calculus::{ito_product, primitive, young_product, CellMeasure, DeclaredClass, Reconstructed};
use stochrecon::grid::{Grid, GridField};
use stochrecon::holder::{bdg_check, distribution_norm, fit_axis_exponents, random_arrays, HolderParams, Sampling};
use stochrecon::increments::{rect_increment, shift_expand, sum_shift_terms, IndexSet};
use stochrecon::noise::{
    brownian_sheet, deterministic_driver, sample_white_noise, sample_white_noise_chunk, CondMode, DriverKind, NoiseSample,
    DEFAULT_MEMORY_CAP,
};
use stochrecon::reconstruction::{reconstruct, verify_characterization, CharacterizationSpec, Germ, ReconstructOptions};
use stochrecon::sewing::{
    additivity_residual, sew, sewing_scaling, FrozenIncrementGerm, SewingConditioning, SewingExponents, SewingQuantity,
    TwoPointGerm,
};
use stochrecon::spde::{
    mesh_convergence_study, regularity_report, solve, Boundary, Coefficient, Diffusion, Exponents, ProblemSpec,
    SolveOptions,
};
use stochrecon::stats::{fit_rate, ols, product_moment};
use stochrecon::wavelets::{build_basis, Family, Kind, TestFunction, WaveletBasis1D, WaveletBasisD};
use stochrecon::Result;

struct Verdict {
    passed: bool,
    detail: String,
}

impl Verdict {
    fn new(checks: &[(bool, String)]) -> Self {
        let failed: Vec<&str> = checks.iter().filter(|c| !c.0).map(|c| c.1.as_str()).collect();
        let detail = if failed.is_empty() {
            checks.iter().map(|c| c.1.as_str()).collect::<Vec<_>>().join("; ")
        } else {
            format!("failed: {}", failed.join("; "))
        };
        Self { passed: failed.is_empty(), detail }
    }
}

// ---------------------------------------------------------------------------
// Oracles

/// `Σ_{S⊆θ} (−1)^{#(θ∖S)} f(x with the S-coordinates taken from y)`.
fn corner_sum(theta: IndexSet, x: &[f64], y: &[f64], f: &dyn Fn(&[f64]) -> f64) -> f64 {
    let axes: Vec<usize> = theta.axes().collect();
    let mut total = 0.0;
    for mask in 0u32..(1 << axes.len()) {
        let mut p = x.to_vec();
        let mut from_y = 0;
        for (b, &a) in axes.iter().enumerate() {
            if mask >> b & 1 == 1 {
                p[a] = y[a];
                from_y += 1;
            }
        }
        let sign = if (axes.len() - from_y) % 2 == 0 { 1.0 } else { -1.0 };
        total += sign * f(&p);
    }
    total
}

/// Random polynomial with degrees up to 3 per axis.
fn random_poly(d: usize, rng: &mut ChaCha8Rng) -> impl Fn(&[f64]) -> f64 {
    let terms: Vec<(f64, Vec<i32>)> =
        (0..6).map(|_| (rng.random_range(-1.0..1.0), (0..d).map(|_| rng.random_range(0..=3)).collect())).collect();
    move |x: &[f64]| terms.iter().map(|(c, k)| c * x.iter().zip(k).map(|(v, &p)| v.powi(p)).product::<f64>()).sum()
}

/// Brownian sheet on the corners of a 2-D grid, by inclusion–exclusion over cells.
fn sheet_2d(noise: &NoiseSample) -> Vec<f64> {
    let g = noise.grid();
    let m = noise.samples();
    let n = g.n;
    let mut b = vec![0.0; (n + 1) * (n + 1) * m];
    for i in 1..=n {
        for j in 1..=n {
            let c = noise.cells.at(g.cell_index(&[i - 1, j - 1])).to_vec();
            for (s, xi) in c.iter().enumerate() {
                let at = |p: usize, q: usize| (p * (n + 1) + q) * m + s;
                b[at(i, j)] = b[at(i - 1, j)] + b[at(i, j - 1)] - b[at(i - 1, j - 1)] + xi;
            }
        }
    }
    b
}

/// Left-point Walsh sum `Σ_c B_{c−} ξ_c` over the whole 2-D grid, per sample.
fn walsh_at_top(noise: &NoiseSample, sheet: &[f64]) -> Vec<f64> {
    let g = noise.grid();
    let m = noise.samples();
    let n = g.n;
    let mut out = vec![0.0; m];
    for i in 0..n {
        for j in 0..n {
            let c = noise.cells.at(g.cell_index(&[i, j]));
            for s in 0..m {
                out[s] += sheet[(i * (n + 1) + j) * m + s] * c[s];
            }
        }
    }
    out
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

/// Corner values of a field against `f(corner coordinates, sample)`.
fn field_vs<F: Fn(&[f64], usize) -> f64>(u: &GridField, f: F) -> f64 {
    let g = u.grid;
    let mut oracle = vec![0.0; u.data.len()];
    for p in 0..g.corner_count() {
        let x = g.corner_coords(&g.corner_multi(p));
        for s in 0..u.samples {
            oracle[p * u.samples + s] = f(&x, s);
        }
    }
    rel_l2(&u.data, &oracle)
}

// ---------------------------------------------------------------------------
// Criteria

fn increment_algebra() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = [0.0f64; 4];
    let gap = |a: f64, b: f64| (a - b).abs() / (1.0 + a.abs().max(b.abs()));
    for d in [2usize, 3] {
        let sets = IndexSet::all(d)?;
        for _ in 0..100 {
            let f = random_poly(d, &mut rng);
            let g = random_poly(d, &mut rng);
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();
            let y: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();
            for &a in &sets {
                let lib = rect_increment(a, &x, &y, &f)?;
                worst[0] = worst[0].max(gap(lib, corner_sum(a, &x, &y, &f)));

                // Product rule: □^a(fg) = Σ_{a1 ∪ a2 = a} □^{a1}f □^{a2}g.
                let fg = |z: &[f64]| f(z) * g(z);
                let mut rhs = 0.0;
                for a1 in a.subsets() {
                    for a2 in a.subsets() {
                        if a1.union(a2) == a {
                            rhs += rect_increment(a1, &x, &y, &f)? * rect_increment(a2, &x, &y, &g)?;
                        }
                    }
                }
                worst[1] = worst[1].max(gap(rect_increment(a, &x, &y, fg)?, rhs));

                for &b in &sets {
                    if !a.is_disjoint(b) {
                        continue;
                    }
                    // Composition: □^a_{x,y}(□^b_{·,y} f) = □^{a∪b}_{x,y} f.
                    let inner = |z: &[f64]| corner_sum(b, z, &y, &f);
                    let lhs = rect_increment(a, &x, &y, inner)?;
                    worst[2] = worst[2].max(gap(lhs, corner_sum(a.union(b), &x, &y, &f)));

                    let terms = shift_expand(a, b, &x, &y)?;
                    worst[3] = worst[3].max(gap(sum_shift_terms(&terms, &y, &f)?, corner_sum(a, &x, &y, &f)));
                }
            }
        }
    }
    let names = ["corner sum", "product rule", "composition", "shift expansion"];
    Ok(Verdict::new(
        &names.iter().zip(worst).map(|(n, w)| (w <= 1e-12, format!("{n} {w:.1e} <= 1e-12"))).collect::<Vec<_>>(),
    ))
}

fn closed_form_filter(r: usize) -> Vec<f64> {
    let s2 = std::f64::consts::SQRT_2;
    match r {
        1 => vec![1.0 / s2; 2],
        2 => {
            let s3 = 3f64.sqrt();
            [1.0 + s3, 3.0 + s3, 3.0 - s3, 1.0 - s3].iter().map(|v| v / (4.0 * s2)).collect()
        }
        3 => {
            let t = 10f64.sqrt();
            let u = (5.0 + 2.0 * t).sqrt();
            [1.0 + t + u, 5.0 + t + 3.0 * u, 10.0 - 2.0 * t + 2.0 * u, 10.0 - 2.0 * t - 2.0 * u, 5.0 + t - 3.0 * u, 1.0 + t - u]
                .iter()
                .map(|v| v / (16.0 * s2))
                .collect()
        }
        _ => unreachable!(),
    }
}

/// `max_y |⟨φ̂^{ζ,n}_y, ψ⟩|` over translates on `axis`, which carries level `n`;
/// the other axis stays at level 2 with its translate centred on `ψ`.
fn decay_values(basis: &WaveletBasisD, zeta: IndexSet, axis: usize, psi: &TestFunction) -> Result<Vec<f64>> {
    let (c, r) = basis.base.support();
    let (lo_psi, hi_psi) = psi.support();
    let other = 1 - axis;
    let centre = 0.5 * (lo_psi[other] + hi_psi[other]);
    let k_other = (4.0 * centre - 0.5 * (c + r)).round() as i64;
    let mut out = Vec::new();
    for n_axis in 2..=7u32 {
        let n: Vec<u32> = (0..2).map(|a| if a == axis { n_axis } else { 2 }).collect();
        let (lo, hi) = basis.overlapping(&n, psi);
        let mut best = 0.0f64;
        for k in lo[axis]..=hi[axis] {
            let mut y = [0.0; 2];
            y[axis] = k as f64 / (1u64 << n_axis) as f64;
            y[other] = k_other as f64 / 4.0;
            best = best.max(basis.inner_product(zeta, &n, &y, psi)?.abs());
        }
        out.push(best);
    }
    Ok(out)
}

fn wavelet_system() -> Result<Verdict> {
    let mut checks = Vec::new();
    // Wide enough that level-2 wavelets already sit well inside the bump.
    let psi = TestFunction::bump_on(10, &[-1.0, -1.0], &[2.0, 2.0])?;
    for r in 1..=3usize {
        let base: WaveletBasis1D = if r == 1 { WaveletBasis1D::haar() } else { build_basis(Family::Daubechies(r), r, 12)? };
        let tol = if r == 1 { 1e-14 } else { 1e-8 };
        let label = if r == 1 { "haar".to_string() } else { format!("db{r}") };

        // Filter-level oracles: orthonormal double shifts, r vanishing moments of the detail filter.
        let h = closed_form_filter(r);
        let l = h.len();
        let g: Vec<f64> = (0..l).map(|k| if k % 2 == 0 { h[l - 1 - k] } else { -h[l - 1 - k] }).collect();
        let filter_gap = max_abs_diff(&base.scaling_filter, &h);
        let mut moment = 0.0f64;
        for m in 0..r {
            moment = moment.max(g.iter().enumerate().map(|(k, v)| v * (k as f64).powi(m as i32)).sum::<f64>().abs());
        }
        checks.push((filter_gap <= 1e-12 && moment <= 1e-12, format!("{label} filter {filter_gap:.1e}, moments {moment:.1e}")));

        let ortho = base.orthonormality_residual()?;
        let mom = base.moment_residual();
        checks.push((ortho <= tol && mom <= tol, format!("{label} orthonormality {ortho:.1e}, vanishing moments {mom:.1e} <= {tol:e}")));

        // Two-level scalar products, d = 2, n = (2,2), disjoint χ and θ.
        let n = 2u32;
        let z = [0.25, 0.5];
        let coarse = |k: i64| k as f64 / (1u64 << n) as f64;
        let fine = |k: i64| k as f64 / (1u64 << (n + 1)) as f64;
        let tap = |v: &[f64], k: i64| if (0..v.len() as i64).contains(&k) { v[k as usize] } else { 0.0 };
        let mut worst = 0.0f64;
        for chi in IndexSet::all(2)? {
            for theta in IndexSet::all(2)? {
                if !chi.is_disjoint(theta) {
                    continue;
                }
                for k0 in -8..=12i64 {
                    for k1 in -8..=12i64 {
                        let k = [k0, k1];
                        let mut lhs = 1.0;
                        let mut rhs = 1.0;
                        for a in 0..2 {
                            if chi.contains(a) {
                                lhs *= base.pair((Kind::Scaling, n + 1, z[a] + fine(k[a])), (Kind::Detail, n, z[a]))?;
                                rhs *= tap(&g, k[a]);
                            } else if theta.contains(a) {
                                lhs *= base.pair((Kind::Scaling, n + 1, z[a] + fine(k[a])), (Kind::Scaling, n, z[a]))?;
                                rhs *= tap(&h, k[a]);
                            } else {
                                lhs *= base.pair((Kind::Scaling, n, z[a] + coarse(k[a])), (Kind::Scaling, n, z[a]))?;
                                rhs *= if k[a] == 0 { 1.0 } else { 0.0 };
                            }
                        }
                        worst = worst.max((lhs - rhs).abs());
                    }
                }
            }
        }
        checks.push((worst <= 1e-8, format!("{label} two-level products {worst:.1e} <= 1e-8")));

        let basis = WaveletBasisD::new(base, 2);
        let scales: Vec<f64> = (2..=7).map(|k| 0.5f64.powi(k)).collect();
        let mut slopes = Vec::new();
        for zeta in IndexSet::all(2)?.into_iter().skip(1) {
            for axis in zeta.axes() {
                let v = decay_values(&basis, zeta, axis, &psi)?;
                slopes.push(fit_rate(&scales, &v)?.slope);
            }
        }
        let least = slopes.iter().cloned().fold(f64::INFINITY, f64::min);
        let bound = r as f64 + 0.4;
        checks.push((least >= bound, format!("{label} decay slope min {least:.3} >= {bound}")));
    }
    Ok(Verdict::new(&checks))
}

fn noise_statistics() -> Result<Verdict> {
    let (n, m, chunk, seed) = (128usize, 10_000usize, 500usize, 21u64);
    let grid = Grid::new(2, n, 1.0)?;
    let full = IndexSet::full(2)?;
    let sheet_sampling = Sampling { exponents: (3..=7).collect(), ..Sampling::default() };
    // Scales down to 8 cells; below that the grid averages of the bump dominate.
    let wn_sampling = Sampling { exponents: (1..=4).collect(), base_points: 10, ..Sampling::default() };
    let psi = TestFunction::bump(2, grid.level() as u32 + 2)?;
    let params = HolderParams::uniform(2, -0.5, 0.0, 2.0, 1.0)?;
    // Points for the covariance check, as corner indices.
    let (ps, pt) = ([n / 2, n / 4], [3 * n / 4, n / 2]);

    let mut walsh = Vec::with_capacity(m);
    let (mut bs, mut bt, mut btop) = (Vec::with_capacity(m), Vec::with_capacity(m), Vec::with_capacity(m));
    let mut sheet_sq: Vec<Vec<f64>> = vec![vec![0.0; 5]; 2];
    let mut sheet_scales = Vec::new();
    let mut wn_sq: Vec<Vec<f64>> = vec![vec![0.0; 4]; 2];
    let mut lambdas = Vec::new();
    let mut offset = 0;
    while offset < m {
        let count = chunk.min(m - offset);
        let noise = sample_white_noise_chunk(grid, offset, count, seed, DEFAULT_MEMORY_CAP)?;
        let w = count as f64 / m as f64;
        let b = brownian_sheet(&noise)?;
        let y = Reconstructed::new(
            Arc::new(ito_product(&b, &DeclaredClass::uniform(2, 0.5, f64::INFINITY, 2.0), &noise, true)?),
            WaveletBasisD::haar(2),
        );
        walsh.extend_from_slice(primitive(&y)?.field.corner(&[n, n]));
        bs.extend_from_slice(b.corner(&ps));
        bt.extend_from_slice(b.corner(&pt));
        btop.extend_from_slice(b.corner(&[n, n]));

        for (axis, fit) in fit_axis_exponents(&b, full, 2.0, &sheet_sampling)? {
            sheet_scales = fit.scales.clone();
            for (acc, v) in sheet_sq[axis].iter_mut().zip(&fit.values) {
                *acc += w * v * v;
            }
        }
        let dn = distribution_norm(&CellMeasure::white_noise(&noise), &psi, &params, &wn_sampling, None)?;
        for row in dn.rows.iter().filter(|r| r.eta.is_empty()) {
            lambdas = row.lambdas.clone();
            for (acc, v) in wn_sq[row.axis].iter_mut().zip(&row.values) {
                *acc += w * v * v;
            }
        }
        offset += count;
    }

    let h = 1.0 / n as f64;
    // E[(Σ B_{c−} ξ_c)²] = Σ_c E[B_{c−}²] |c| = (h² Σ_{i<N} i)².
    let isometry_target = (h * h * (n * (n - 1) / 2) as f64).powi(2);
    let iso = product_moment(&walsh, &walsh);
    let cov_target = (ps[0].min(pt[0]) as f64 * h) * (ps[1].min(pt[1]) as f64 * h);
    let cov = product_moment(&bs, &bt);
    let var = product_moment(&btop, &btop);
    let mut checks = vec![
        (iso.within(isometry_target, 4.0), format!("isometry {:.4}±{:.4} vs {isometry_target:.4}", iso.value, iso.se)),
        (cov.within(cov_target, 4.0), format!("sheet covariance {:.4}±{:.4} vs {cov_target}", cov.value, cov.se)),
        (var.within(1.0, 4.0), format!("sheet variance at T {:.4}±{:.4} vs 1", var.value, var.se)),
    ];
    for axis in 0..2 {
        let rms: Vec<f64> = sheet_sq[axis].iter().map(|v| v.sqrt()).collect();
        let s = fit_rate(&sheet_scales, &rms)?.slope;
        checks.push(((s - 0.5).abs() <= 0.05, format!("sheet exponent axis {} {s:.3}", axis + 1)));
        let rms: Vec<f64> = wn_sq[axis].iter().map(|v| v.sqrt()).collect();
        let s = fit_rate(&lambdas, &rms)?.slope;
        checks.push(((s + 0.5).abs() <= 0.05, format!("white-noise slope axis {} {s:.3}", axis + 1)));
    }
    Ok(Verdict::new(&checks))
}

fn walsh_identity() -> Result<Verdict> {
    let (n, m) = (128usize, 1000usize);
    let noise = sample_white_noise(n, 1.0, 2, m, 5)?;
    let sheet = sheet_2d(&noise);
    let direct = walsh_at_top(&noise, &sheet);
    let b = brownian_sheet(&noise)?;
    let germ = ito_product(&b, &DeclaredClass::uniform(2, 0.5, f64::INFINITY, 2.0), &noise, true)?;
    drop(b);
    let y = primitive(&Reconstructed::new(Arc::new(germ), WaveletBasisD::haar(2)))?;
    let top = max_abs_diff(y.field.corner(&[n, n]), &direct);
    // An interior corner, summing only the cells below it.
    let (i, j) = (n / 2, 3 * n / 8);
    let mut inner = vec![0.0; m];
    for a in 0..i {
        for c in 0..j {
            let xi = noise.cells.at(noise.grid().cell_index(&[a, c]));
            for s in 0..m {
                inner[s] += sheet[(a * (n + 1) + c) * m + s] * xi[s];
            }
        }
    }
    let mid = max_abs_diff(y.field.corner(&[i, j]), &inner);
    Ok(Verdict::new(&[
        (top <= 1e-10, format!("at T {top:.1e} <= 1e-10")),
        (mid <= 1e-10, format!("at an interior corner {mid:.1e} <= 1e-10")),
    ]))
}

/// Expected slope for a scaling row: `on_theta` on θ axes, `off_theta` elsewhere;
/// `None` means the conditioned entry must vanish.
fn expected(theta: IndexSet, eta: IndexSet, axis: usize, on_theta: f64, off_theta: f64, vanish: bool) -> Option<f64> {
    if vanish && !eta.is_empty() {
        None
    } else {
        Some(if theta.contains(axis) { on_theta } else { off_theta })
    }
}

fn characterization() -> Result<Verdict> {
    let (n, m) = (128usize, 1000usize);
    let basis = WaveletBasisD::haar(2);
    let noise = sample_white_noise(n, 1.0, 2, m, 13)?;
    let grid = noise.grid();
    let full = IndexSet::full(2)?;
    let walsh = |nz: &NoiseSample| -> Result<Box<dyn Germ>> {
        let b = brownian_sheet(nz)?;
        Ok(Box::new(ito_product(&b, &DeclaredClass::uniform(2, 0.5, f64::INFINITY, 2.0), nz, true)?))
    };
    let young = |_: &NoiseSample| -> Result<Box<dyn Germ>> {
        let u = GridField::from_corner_fn(grid, |x| 1.0 + x[0] * x[1]);
        let z = deterministic_driver(DriverKind::SmoothPoly, n, 1.0, 2)?;
        Ok(Box::new(young_product(&u, &DeclaredClass::uniform(2, 1.0, 0.0, f64::INFINITY), &CellMeasure::derivative(&z, 1.0)?, false)?))
    };
    let psi = TestFunction::bump_on(grid.level() as u32 + 2, &[0.25, 0.25], &[0.75, 0.75])?;
    let mut checks = Vec::new();
    // (label, rebuild, γ on θ axes, α elsewhere, conditioned entries vanish)
    let cases: [(&str, &(dyn Fn(&NoiseSample) -> Result<Box<dyn Germ>> + Sync), f64, f64, bool); 2] =
        [("B·ξ", &walsh, 0.0, -0.5, true), ("u·∂Z", &young, 1.0, 0.0, false)];
    for (label, rebuild, gamma, alpha, vanish) in cases {
        let germ = rebuild(&noise)?;
        let spec = CharacterizationSpec {
            germ: germ.as_ref(),
            rebuild: Some(rebuild),
            noise: Some(&noise),
            basis: &basis,
            z: vec![0.5, 0.5],
            lambdas: (1..=4).map(|k| 0.5f64.powi(k)).collect(),
            m: 2.0,
            cond: CondMode::Exact,
        };
        let report = verify_characterization(&spec)?;
        let mut misses = Vec::new();
        let mut widest = 0.0f64;
        for row in &report.rows {
            match expected(row.theta, row.eta, row.axis, gamma, alpha, vanish) {
                Some(p) => {
                    let s = row.fit.as_ref().map(|f| f.slope).unwrap_or(f64::NAN);
                    widest = widest.max((s - p).abs());
                    if !((s - p).abs() <= 0.1) {
                        misses.push(format!("θ={} η={} axis {}: {s:.3} vs {p}", row.theta, row.eta, row.axis + 1));
                    }
                }
                None if row.zero_score > 4.0 => {
                    misses.push(format!("θ={} η={} axis {}: zero score {:.1}", row.theta, row.eta, row.axis + 1, row.zero_score))
                }
                None => {}
            }
        }
        checks.push((misses.is_empty(), format!("{label} slopes within {widest:.3} of prediction{}", misses.iter().map(|x| format!("; {x}")).collect::<String>())));

        if vanish {
            let level = grid.level() as u32;
            let rec = reconstruct(germ.as_ref(), full, &[0.25, 0.25], &psi, &basis, &ReconstructOptions { n_min: 3, n_max: level, cauchy_tol: 1e-12 })?;
            let xs: Vec<f64> = rec.levels.iter().skip(1).map(|&l| l as f64).collect();
            let ys: Vec<f64> = rec.increments.iter().map(|e| e.value.log2()).collect();
            let (slope, _, r2) = ols(&xs, &ys);
            checks.push((slope < 0.0 && r2 > 0.9, format!("{label} Cauchy increments slope {slope:.3} per level, R² {r2:.3}")));
        }
    }
    Ok(Verdict::new(&checks))
}

fn primitive_map() -> Result<Verdict> {
    let (n, m) = (128usize, 400usize);
    let noise = sample_white_noise(n, 1.0, 2, m, 17)?;
    let y = primitive(&CellMeasure::white_noise(&noise))?;
    let sheet = sheet_2d(&noise);
    let exact = max_abs_diff(&y.field.data, &sheet);

    let full = IndexSet::full(2)?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut additivity = 0.0f64;
    for _ in 0..200 {
        let s: Vec<usize> = (0..2).map(|_| rng.random_range(0..n - 2)).collect();
        let t: Vec<usize> = s.iter().map(|&a| rng.random_range(a + 2..=n)).collect();
        let u: Vec<usize> = s.iter().zip(&t).map(|(&a, &b)| rng.random_range(a + 1..b)).collect();
        let whole = y.field.increment(full, &s, &t);
        let mut parts = vec![0.0; m];
        for (lo0, hi0) in [(s[0], u[0]), (u[0], t[0])] {
            for (lo1, hi1) in [(s[1], u[1]), (u[1], t[1])] {
                for (p, v) in parts.iter_mut().zip(y.field.increment(full, &[lo0, lo1], &[hi0, hi1])) {
                    *p += v;
                }
            }
        }
        additivity = additivity.max(max_abs_diff(&whole, &parts));
    }
    let mut checks = vec![
        (exact <= 1e-12, format!("primitive of ξ vs sheet {exact:.1e}")),
        (additivity < 1e-8, format!("additivity {additivity:.1e} < 1e-8")),
    ];
    for (axis, fit) in fit_axis_exponents(&y.field, full, 2.0, &Sampling { exponents: (3..=7).collect(), ..Sampling::default() })? {
        let s = fit.slope;
        checks.push(((s - 0.5).abs() <= 0.05, format!("exponent axis {} {s:.3} (−½ + 1)", axis + 1)));
    }
    Ok(Verdict::new(&checks))
}

fn young_product_check() -> Result<Verdict> {
    // u = 1 + x₁x₂, Z = x₁x₂: ∫_{[0,1]²} u ∂Z = ∫ (1 + x₁x₂) dx = 1 + 1/4.
    let exact = 1.25;
    let levels = [64usize, 128, 256];
    let mut values = Vec::new();
    for &n in &levels {
        let grid = Grid::new(2, n, 1.0)?;
        let u = GridField::from_corner_fn(grid, |x| 1.0 + x[0] * x[1]);
        let z = deterministic_driver(DriverKind::SmoothPoly, n, 1.0, 2)?;
        let germ = young_product(&u, &DeclaredClass::uniform(2, 1.0, 0.0, f64::INFINITY), &CellMeasure::derivative(&z, 1.0)?, false)?;
        let p = primitive(&Reconstructed::new(Arc::new(germ), WaveletBasisD::haar(2)))?;
        values.push(p.field.corner(&[n, n])[0]);
    }
    let errors: Vec<f64> = values.iter().map(|v| (v - exact).abs()).collect();
    let log_h: Vec<f64> = levels.iter().map(|&n| -(n as f64).log2()).collect();
    let (rate, _, _) = ols(&log_h, &errors.iter().map(|e| e.log2()).collect::<Vec<_>>());
    let self_rate = ((values[1] - values[0]).abs() / (values[2] - values[1]).abs()).log2();
    Ok(Verdict::new(&[
        (rate >= 0.9, format!("error vs oracle rate {rate:.3}, error at 256 {:.1e}", errors[2])),
        (self_rate >= 0.9, format!("self-convergence rate {self_rate:.3}")),
    ]))
}

fn spde_solver() -> Result<Verdict> {
    let n = 256;
    let base = |sigma: Diffusion, c: f64, boundary: Boundary| ProblemSpec {
        n,
        t: 1.0,
        d: 2,
        sigma,
        boundary,
        coefficient: Coefficient::Constant { c },
        driver: DriverKind::SmoothPoly,
        driver_seed: None,
        exponents: Exponents::uniform(2, 0.45, 0.75, 0.25),
        enforce: false,
    };
    let opts = SolveOptions::default();
    let noise = sample_white_noise(n, 1.0, 2, 50, 23)?;
    let mut checks = Vec::new();

    // σ = 0, f = 0: u = v.
    let v = Boundary { c: 1.0, slopes: vec![0.5, -0.25] };
    let (p, _) = base(Diffusion::Constant { c: 0.0 }, 0.0, v.clone()).build()?;
    let u = solve(&p, &noise, &opts)?.u;
    let e = field_vs(&u, |x, _| v.eval(x));
    checks.push((e < 5e-2, format!("σ=0 f=0 rel L2 {e:.1e}")));

    // σ = 1, f = 0: u = v + B per sample.
    let (p, _) = base(Diffusion::Constant { c: 1.0 }, 0.0, v.clone()).build()?;
    let u = solve(&p, &noise, &opts)?.u;
    let sheet = sheet_2d(&noise);
    let m = noise.samples();
    let g = u.grid;
    let e = field_vs(&u, |x, s| {
        let idx = g.corner_of(x).expect("grid corner");
        v.eval(x) + sheet[(idx[0] * (n + 1) + idx[1]) * m + s]
    });
    checks.push((e < 5e-2, format!("σ=1 f=0 rel L2 {e:.1e}")));

    // σ = 0, f = c, Z = x₁x₂, v = 1: ∂₁∂₂u = c u, so u = Σ_k (c x₁x₂)^k / (k!)².
    let c = 1.0;
    let (p, _) = base(Diffusion::Constant { c: 0.0 }, c, Boundary::constant(2, 1.0)).build()?;
    let u = solve(&p, &noise, &opts)?.u;
    let bessel = |x: &[f64]| {
        let q = c * x[0] * x[1];
        let (mut term, mut sum) = (1.0, 1.0);
        for k in 1..40 {
            term *= q / (k * k) as f64;
            sum += term;
        }
        sum
    };
    let e = field_vs(&u, |x, _| bessel(x));
    checks.push((e < 5e-2, format!("σ=0 f=1 smooth Z rel L2 {e:.1e}")));
    drop(noise);

    // Full mixed problem.
    let (p, _) = ProblemSpec::default_regime(n).build()?;
    let alpha = p.exponents.alpha.clone();
    let noise = sample_white_noise(n, 1.0, 2, 200, 29)?;
    let sol = solve(&p, &noise, &opts)?;
    checks.push((sol.contraction < 1.0, format!("contraction {:.3} < 1", sol.contraction)));
    let study = mesh_convergence_study(&p, &noise, &[16, 32, 64, 128, 256])?;
    let rate = study.fit.as_ref().map(|f| f.slope).unwrap_or(f64::NAN);
    checks.push((rate > 0.0, format!("mesh rate {rate:.3} > 0")));
    let report = regularity_report(&sol.u, &p.exponents, 2.0, &Sampling::default())?;
    let mut least = f64::INFINITY;
    let mut ok = true;
    for (_, fits) in &report.exponents {
        for (axis, fit) in fits {
            least = least.min(fit.slope);
            ok &= fit.slope >= alpha[*axis] - 0.1;
        }
    }
    checks.push((ok, format!("regularity min {least:.3} >= α − 0.1 = {:.2}", alpha[0] - 0.1)));
    Ok(Verdict::new(&checks))
}

fn sewing_bridge() -> Result<Verdict> {
    let (n, m) = (256usize, 1000usize);
    let noise = sample_white_noise(n, 1.0, 2, m, 31)?;
    let direct = walsh_at_top(&noise, &sheet_2d(&noise));
    let b = brownian_sheet(&noise)?;
    let xi = FrozenIncrementGerm::new(b.clone(), b)?;
    let full = IndexSet::full(2)?;
    let sewn = sew(&xi, full, &[0, 0], &[n, n])?;
    let num: f64 = sewn.value.iter().zip(&direct).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = direct.iter().map(|b| b * b).sum();
    let gap = (num / den).sqrt();
    let additivity = additivity_residual(&xi, full, &[n / 16, n / 16], &[n / 16 + n / 2, n / 16 + n / 2])?;

    let exponents = SewingExponents { alpha: vec![0.5; 2], beta: vec![1.0; 2], gamma: vec![f64::INFINITY; 2] };
    let rebuild = |nz: &NoiseSample| -> Result<Box<dyn TwoPointGerm>> {
        let b = brownian_sheet(nz)?;
        Ok(Box::new(FrozenIncrementGerm::new(b.clone(), b)?))
    };
    let cond = SewingConditioning { noise: &noise, rebuild: &rebuild };
    let widths = [128usize, 64, 32, 16, 8];
    let mut checks = vec![
        (gap < 1e-2, format!("sewn vs Walsh relative difference {gap:.1e} < 1e-2")),
        (additivity < 1e-8, format!("additivity {additivity:.1e}")),
    ];
    for (label, q) in [("remainder", SewingQuantity::Remainder), ("δ", SewingQuantity::Delta)] {
        let rows = sewing_scaling(&xi, q, &[n / 4, n / 4], &widths, &exponents, 2.0, Some(&cond))?;
        let mut misses = Vec::new();
        let mut widest = 0.0f64;
        for r in &rows {
            // ‖·‖ ∝ w^β on θ axes and w^α elsewhere; conditioned entries vanish.
            match expected(r.theta, r.eta, r.axis, 1.0, 0.5, true) {
                Some(p) => {
                    let s = r.fit.as_ref().map(|f| f.slope).unwrap_or(f64::NAN);
                    widest = widest.max((s - p).abs());
                    if !((s - p).abs() <= 0.1) {
                        misses.push(format!("θ={} axis {}: {s:.3} vs {p}", r.theta, r.axis + 1));
                    }
                }
                None if r.zero_score > 4.0 => misses.push(format!("θ={} η={}: zero score {:.1}", r.theta, r.eta, r.zero_score)),
                None => {}
            }
        }
        checks.push((misses.is_empty(), format!("{label} slopes within {widest:.3}{}", misses.iter().map(|x| format!("; {x}")).collect::<String>())));
    }
    Ok(Verdict::new(&checks))
}

fn extended_bdg() -> Result<Verdict> {
    let arrays = random_arrays(32, 50, 11);
    let mut worst = 0.0f64;
    let mut violations = 0;
    for (i, a) in arrays.iter().enumerate() {
        let r = bdg_check(a, 2.0, 400, 100 + i as u64, 10.0)?;
        worst = worst.max(r.constant);
        violations += r.violations;
    }
    Ok(Verdict::new(&[
        (worst <= 10.0, format!("single constant C = {worst:.3} <= 10 over 50 arrays")),
        (violations == 0, format!("{violations} rows beyond 4 standard errors")),
    ]))
}

#[test]
fn acceptance_criteria() {
    type Criterion = fn() -> Result<Verdict>;
    let criteria: [(&str, f64, Criterion); 10] = [
        ("increment algebra", 5.0, increment_algebra),
        ("wavelet system", 30.0, wavelet_system),
        ("noise statistics", 120.0, noise_statistics),
        ("Walsh reconstruction identity", 60.0, walsh_identity),
        ("reconstruction characterization", 300.0, characterization),
        ("primitive map", 60.0, primitive_map),
        ("Young product", 120.0, young_product_check),
        ("SPDE solver", 600.0, spde_solver),
        ("sewing bridge", 180.0, sewing_bridge),
        ("extended BDG", 60.0, extended_bdg),
    ];
    let mut failed = Vec::new();
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let clock = Instant::now();
        let verdict = run().unwrap_or_else(|e| Verdict { passed: false, detail: format!("error: {e}") });
        let secs = clock.elapsed().as_secs_f64();
        let passed = verdict.passed && secs <= *budget;
        // Straight to the stderr handle so the lines survive libtest's output capture.
        let _ = writeln!(
            std::io::stderr(),
            "criterion {:>2} {name}: {} ({}) [{secs:.1} s of {budget} s]",
            i + 1,
            if passed { "PASS" } else { "FAIL" },
            verdict.detail
        );
        if !passed {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
