//! Operations on fields and distributions: composition, scalar products,
//! Young and Walsh products, interior primitives and primitives.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{FieldKind, Grid, GridField};
use crate::increments::IndexSet;
use crate::noise::NoiseSample;
use crate::reconstruction::{CoherenceClass, Germ, ProductGerm};
use crate::wavelets::{TestFunction, WaveletBasisD};

/// Declared Hölder class `C^{α,δ}L_m` (`m = ∞` for bounded fields). Advisory
/// metadata used by the hypothesis checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeclaredClass {
    pub alpha: Vec<f64>,
    pub delta: Vec<f64>,
    pub m: f64,
}

impl DeclaredClass {
    pub fn uniform(d: usize, alpha: f64, delta: f64, m: f64) -> Self {
        Self { alpha: vec![alpha; d], delta: vec![delta; d], m }
    }
}

/// A random distribution on the grid domain.
pub trait RandomDistribution: Send + Sync {
    fn grid(&self) -> Grid;

    fn samples(&self) -> usize;

    /// `f(ψ)`, one value per sample.
    fn pair(&self, psi: &TestFunction) -> Result<Vec<f64>>;

    /// `f(1_c)` for every grid cell, as a cell field.
    fn cell_masses(&self) -> Result<GridField>;

    fn class(&self) -> Option<DeclaredClass> {
        None
    }

    fn linear_in_noise(&self) -> bool {
        false
    }
}

/// A distribution given by its cell masses: white noise, `∂Z`, densities.
#[derive(Clone, Debug)]
pub struct CellMeasure {
    pub masses: GridField,
    pub class: Option<DeclaredClass>,
    pub linear: bool,
}

impl CellMeasure {
    pub fn new(masses: GridField) -> Result<Self> {
        if masses.kind != FieldKind::CellDensity {
            return invalid("a cell measure needs a cell field");
        }
        Ok(Self { masses, class: None, linear: false })
    }

    /// White noise, class `C^{−½1,∞}`.
    pub fn white_noise(noise: &NoiseSample) -> Self {
        let d = noise.grid().d;
        Self {
            masses: noise.cells.clone(),
            class: Some(DeclaredClass::uniform(d, -0.5, f64::INFINITY, f64::INFINITY)),
            linear: true,
        }
    }

    /// Constant density `c`.
    pub fn density(grid: Grid, c: f64) -> Self {
        let mut masses = GridField::zeros(grid, 1, FieldKind::CellDensity);
        masses.data.fill(c * grid.cell_volume());
        Self { masses, class: Some(DeclaredClass::uniform(grid.d, 0.0, f64::INFINITY, f64::INFINITY)), linear: false }
    }

    /// `∂^{[d]}Z` of a deterministic corner field: the cell masses are `□^{[d]}Z` over each cell.
    pub fn derivative(z: &GridField, beta: f64) -> Result<Self> {
        if z.kind != FieldKind::CornerValues {
            return invalid("the mixed derivative needs a corner field");
        }
        let g = z.grid;
        let m = z.samples;
        let full = IndexSet::full(g.d)?;
        let mut masses = GridField::zeros(g, m, FieldKind::CellDensity);
        for c in 0..g.cell_count() {
            let lo = g.cell_multi(c);
            let hi: Vec<usize> = lo.iter().map(|i| i + 1).collect();
            masses.at_mut(c).copy_from_slice(&z.increment(full, &lo, &hi));
        }
        Ok(Self { masses, class: Some(DeclaredClass::uniform(g.d, beta - 1.0, f64::INFINITY, f64::INFINITY)), linear: false })
    }
}

impl RandomDistribution for CellMeasure {
    fn grid(&self) -> Grid {
        self.masses.grid
    }

    fn samples(&self) -> usize {
        self.masses.samples
    }

    fn pair(&self, psi: &TestFunction) -> Result<Vec<f64>> {
        psi.pair_cells(&self.masses)
    }

    fn cell_masses(&self) -> Result<GridField> {
        Ok(self.masses.clone())
    }

    fn class(&self) -> Option<DeclaredClass> {
        self.class.clone()
    }

    fn linear_in_noise(&self) -> bool {
        self.linear
    }
}

/// `R(F)` evaluated through the grid-level partial sums of a germ.
#[derive(Clone)]
pub struct Reconstructed {
    pub germ: Arc<dyn Germ>,
    pub basis: WaveletBasisD,
    pub class: Option<DeclaredClass>,
}

impl Reconstructed {
    pub fn new(germ: Arc<dyn Germ>, basis: WaveletBasisD) -> Self {
        let class = germ.class().map(|c| DeclaredClass { alpha: c.alpha, delta: c.delta, m: c.m });
        Self { germ, basis, class }
    }
}

impl RandomDistribution for Reconstructed {
    fn grid(&self) -> Grid {
        self.germ.grid()
    }

    fn samples(&self) -> usize {
        self.germ.samples()
    }

    fn pair(&self, psi: &TestFunction) -> Result<Vec<f64>> {
        let g = self.grid();
        let n = vec![g.level().max(0) as u32; g.d];
        crate::reconstruction::partial_sum(self.germ.as_ref(), IndexSet::full(g.d)?, &vec![0.0; g.d], psi, &n, &self.basis)
    }

    /// `R(F)(1_c) = F_c(1_c)` at the grid level with Haar.
    fn cell_masses(&self) -> Result<GridField> {
        let g = self.grid();
        let m = self.samples();
        let mut out = GridField::zeros(g, m, FieldKind::CellDensity);
        if !self.basis.is_haar() {
            for c in 0..g.cell_count() {
                let lo = g.cell_multi(c);
                let lo_f: Vec<f64> = g.corner_coords(&lo);
                let hi_f: Vec<f64> = lo_f.iter().map(|v| v + g.spacing()).collect();
                let ind = TestFunction::indicator(g.level() as u32 + 2, &lo_f, &hi_f)?;
                let v = self.pair(&ind)?;
                out.at_mut(c).copy_from_slice(&v);
            }
            return Ok(out);
        }
        let level = g.level().max(0) as u32;
        let n = vec![level; g.d];
        let scale = g.cell_volume().sqrt();
        for c in 0..g.cell_count() {
            let idx = g.cell_multi(c);
            let v = self.germ.eval_block(&idx, &n, &idx)?;
            for (o, x) in out.at_mut(c).iter_mut().zip(v.iter().cycle()) {
                *o = scale * x;
            }
        }
        Ok(out)
    }

    fn class(&self) -> Option<DeclaredClass> {
        self.class.clone()
    }

    fn linear_in_noise(&self) -> bool {
        self.germ.cellwise_affine()
    }
}

/// Pointwise `g(u)` with declared class downgraded to `C^{αε/d}`.
pub fn compose(g: impl Fn(f64) -> f64, u: &GridField, eps: f64, class: Option<&DeclaredClass>) -> Result<(GridField, Option<DeclaredClass>)> {
    if !(eps > 0.0 && eps <= 1.0) {
        return invalid(format!("Hölder exponent ε={eps} outside (0,1]"));
    }
    let d = u.grid.d as f64;
    let out = u.map(g);
    let cls = class.map(|c| DeclaredClass {
        alpha: c.alpha.iter().map(|a| a * eps / d).collect(),
        delta: c.delta.clone(),
        m: c.m,
    });
    Ok((out, cls))
}

/// Pointwise `f·u`; the moment order follows `1/k = 1/m + 1/n`.
pub fn scalar_multiply(
    f: &GridField,
    u: &GridField,
    classes: Option<(&DeclaredClass, &DeclaredClass)>,
) -> Result<(GridField, Option<DeclaredClass>)> {
    if f.grid != u.grid || f.kind != u.kind {
        return invalid("scalar multiplication needs fields on the same grid");
    }
    let out = f.zip_with(u, |a, b| a * b)?;
    let cls = classes.map(|(cf, cu)| {
        let k = 1.0 / (1.0 / cf.m + 1.0 / cu.m);
        DeclaredClass {
            alpha: cf.alpha.iter().zip(&cu.alpha).map(|(a, b)| a.min(*b)).collect(),
            delta: cf.delta.iter().zip(&cu.delta).map(|(a, b)| a.min(*b)).collect(),
            m: k,
        }
    });
    Ok((out, cls))
}

/// Germ `(u·ζ)_x = u(x)ζ` for a deterministic distribution `ζ ∈ C^β`, class
/// `G^{β, α+β, δ}`. Refused when `α+β ≤ −½` or `α+β+δ ≤ 0` on some axis
/// unless `force` is set.
pub fn young_product(u: &GridField, u_class: &DeclaredClass, zeta: &CellMeasure, force: bool) -> Result<ProductGerm> {
    if zeta.masses.samples != 1 {
        return invalid("the Young product needs a deterministic distribution");
    }
    let beta = zeta
        .class
        .as_ref()
        .map(|c| c.alpha.clone())
        .ok_or_else(|| Error::InvalidArgument("the distribution must declare its regularity".into()))?;
    let d = u.grid.d;
    for a in 0..d {
        let s = u_class.alpha[a] + beta[a];
        if !force && (s <= -0.5 || s + u_class.delta[a] <= 0.0) {
            return Err(Error::Hypothesis(format!(
                "axis {}: α+β = {s} and α+β+δ = {} violate the product hypotheses",
                a + 1,
                s + u_class.delta[a]
            )));
        }
    }
    let class = CoherenceClass {
        alpha: beta.clone(),
        gamma: (0..d).map(|a| u_class.alpha[a] + beta[a]).collect(),
        delta: u_class.delta.clone(),
        m: u_class.m,
    };
    Ok(ProductGerm::new(u.clone(), zeta.masses.clone())?.with_class(class).with_cellwise_affine(true))
}

/// Germ `(u·ξ)_x = u(x)ξ` for `u` adapted to the noise filtration; class
/// `G^{−½1, −½1+α, ∞}`.
pub fn ito_product(u: &GridField, u_class: &DeclaredClass, noise: &NoiseSample, adapted: bool) -> Result<ProductGerm> {
    if !adapted {
        return Err(Error::Hypothesis("the field is not adapted to the noise filtration".into()));
    }
    let d = u.grid.d;
    let class = CoherenceClass {
        alpha: vec![-0.5; d],
        gamma: u_class.alpha.iter().map(|a| a - 0.5).collect(),
        delta: vec![f64::INFINITY; d],
        m: u_class.m,
    };
    Ok(ProductGerm::new(u.clone(), noise.cells.clone())?.with_class(class).with_cellwise_affine(true))
}

/// Cauchy log of a limit over levels.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LimitLog {
    pub levels: Vec<u32>,
    /// Largest per-sample change between consecutive levels.
    pub changes: Vec<f64>,
}

/// `lim_n f(P_n 1_{(s,t]})` for `ŝ = s − ε|t−s| ≥ 0` and `t̂ = t + ε|t−s| ≤ T`.
pub fn interior_primitive(
    f: &dyn RandomDistribution,
    s: &[f64],
    t: &[f64],
    basis: &WaveletBasisD,
    n_max: u32,
    eps: f64,
) -> Result<(Vec<f64>, LimitLog)> {
    let g = f.grid();
    if s.len() != g.d || t.len() != g.d {
        return invalid("points must match the grid dimension");
    }
    for a in 0..g.d {
        let w = t[a] - s[a];
        if !(w > 0.0) {
            return invalid(format!("empty box on axis {}", a + 1));
        }
        if s[a] - eps * w < -1e-12 || t[a] + eps * w > g.t + 1e-12 {
            return invalid(format!("box on axis {} violates the margin ε={eps}", a + 1));
        }
    }
    let level = g.level().max(0) as u32;
    let res = level.max(n_max) + 2;
    let ind = TestFunction::indicator(res, s, t)?;
    let mut log = LimitLog { levels: Vec::new(), changes: Vec::new() };
    let mut prev: Option<Vec<f64>> = None;
    let top = n_max.min(level);
    let first = top.saturating_sub(3);
    for n in first..=top {
        let projected = basis.project(&vec![n; g.d], &ind)?;
        let v = f.pair(&projected)?;
        if let Some(p) = &prev {
            log.changes.push(v.iter().zip(p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        }
        log.levels.push(n);
        prev = Some(v);
    }
    Ok((prev.expect("at least one level"), log))
}

/// Primitive `Y` with `Y = 0` on the faces through 0 and
/// `□^{[d]}_{x,y}Y = ∫_{(x,y]} f`.
#[derive(Clone, Debug)]
pub struct Primitive {
    pub field: GridField,
    pub class: Option<DeclaredClass>,
}

/// Primitive from the cell masses of `f` (exact telescoping for grid distributions).
pub fn primitive(f: &dyn RandomDistribution) -> Result<Primitive> {
    let field = f.cell_masses()?.cumulative()?;
    let class = f.class().map(|c| DeclaredClass { alpha: c.alpha.iter().map(|a| a + 1.0).collect(), delta: c.delta, m: c.m });
    Ok(Primitive { field, class })
}

/// `∫_{(s,t]} f` assembled from interior primitives: the box is split at its
/// midpoint into `2^d` sub-boxes; each sub-box is exhausted by the dyadic
/// shells `s_k = s + 2^{-k}|t−s|` shrinking towards its outer corner, and
/// every shell piece satisfies the ε = ½ margin.
pub fn box_integral(f: &dyn RandomDistribution, s: &[f64], t: &[f64], depth: u32) -> Result<Vec<f64>> {
    let g = f.grid();
    let d = g.d;
    if s.len() != d || t.len() != d {
        return invalid("points must match the grid dimension");
    }
    let masses = f.cell_masses()?;
    let m = masses.samples;
    let mut total = vec![0.0; m];
    let mid: Vec<f64> = (0..d).map(|a| 0.5 * (s[a] + t[a])).collect();
    for corner in 0..(1usize << d) {
        // Per axis the pieces of one sub-box, geometrically shrinking towards the outer end.
        let pieces: Vec<Vec<(f64, f64)>> = (0..d)
            .map(|a| {
                let upper = corner >> a & 1 == 1;
                let (lo, hi) = if upper { (mid[a], t[a]) } else { (s[a], mid[a]) };
                let w = hi - lo;
                (1..=depth)
                    .map(|k| {
                        let far = w * 0.5f64.powi(k as i32 - 1);
                        let near = w * 0.5f64.powi(k as i32);
                        if upper {
                            (hi - far, hi - near)
                        } else {
                            (lo + near, lo + far)
                        }
                    })
                    .collect()
            })
            .collect();
        let counts: Vec<usize> = vec![depth as usize; d];
        let mut err = None;
        Grid::for_each_box(&vec![0; d], &counts, |ks| {
            if err.is_some() {
                return;
            }
            let lo: Vec<f64> = (0..d).map(|a| pieces[a][ks[a]].0).collect();
            let hi: Vec<f64> = (0..d).map(|a| pieces[a][ks[a]].1).collect();
            match box_mass(&masses, &lo, &hi) {
                Ok(v) => total.iter_mut().zip(&v).for_each(|(o, x)| *o += x),
                Err(e) => err = Some(e),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
    }
    Ok(total)
}

/// `f(P_L 1_{(lo,hi]})` at the grid level: cell masses weighted by the
/// covered fraction of each cell.
fn box_mass(masses: &GridField, lo: &[f64], hi: &[f64]) -> Result<Vec<f64>> {
    let g = masses.grid;
    let h = g.spacing();
    let d = g.d;
    let m = masses.samples;
    let mut first = vec![0usize; d];
    let mut last = vec![0usize; d];
    let mut fracs: Vec<Vec<f64>> = Vec::with_capacity(d);
    for a in 0..d {
        if lo[a] < -1e-12 || hi[a] > g.t + 1e-12 {
            return invalid("box leaves the domain");
        }
        let i0 = ((lo[a] / h).floor() as usize).min(g.n - 1);
        let i1 = ((hi[a] / h).ceil() as usize).clamp(i0 + 1, g.n);
        first[a] = i0;
        last[a] = i1;
        fracs.push(
            (i0..i1)
                .map(|i| {
                    let c0 = i as f64 * h;
                    ((hi[a].min(c0 + h) - lo[a].max(c0)) / h).max(0.0)
                })
                .collect(),
        );
    }
    let mut out = vec![0.0; m];
    Grid::for_each_box(&first, &last, |idx| {
        let w: f64 = (0..d).map(|a| fracs[a][idx[a] - first[a]]).product();
        if w == 0.0 {
            return;
        }
        let c = g.cell_index(idx);
        for (o, v) in out.iter_mut().zip(masses.at(c)) {
            *o += w * v;
        }
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{brownian_sheet, sample_white_noise};

    #[test]
    fn primitive_of_noise_is_the_sheet() {
        let noise = sample_white_noise(16, 1.0, 2, 4, 1).unwrap();
        let y = primitive(&CellMeasure::white_noise(&noise)).unwrap();
        assert_eq!(y.field, brownian_sheet(&noise).unwrap());
    }

    #[test]
    fn dyadic_shells_recover_box_integrals() {
        let noise = sample_white_noise(16, 1.0, 2, 3, 2).unwrap();
        let xi = CellMeasure::white_noise(&noise);
        let b = brownian_sheet(&noise).unwrap();
        let v = box_integral(&xi, &[0.0, 0.0], &[0.75, 1.0], 48).unwrap();
        let exact = b.corner(&[12, 16]);
        for (a, e) in v.iter().zip(exact) {
            assert!((a - e).abs() < 1e-10, "{a} vs {e}");
        }
    }

    #[test]
    fn interior_primitive_of_density() {
        let grid = Grid::new(2, 16, 1.0).unwrap();
        let f = CellMeasure::density(grid, 3.0);
        let (v, _) = interior_primitive(&f, &[0.25, 0.25], &[0.5, 0.75], &WaveletBasisD::haar(2), 4, 0.5).unwrap();
        assert!((v[0] - 3.0 * 0.25 * 0.5).abs() < 1e-12);
        assert!(interior_primitive(&f, &[0.0, 0.25], &[0.5, 0.75], &WaveletBasisD::haar(2), 4, 0.5).is_err());
    }

    #[test]
    fn young_hypotheses() {
        let grid = Grid::new(2, 8, 1.0).unwrap();
        let u = GridField::from_corner_fn(grid, |x| x[0]);
        let z = GridField::from_corner_fn(grid, |x| x[0] * x[1]);
        let zeta = CellMeasure::derivative(&z, 0.2).unwrap();
        let weak = DeclaredClass::uniform(2, 0.2, 0.0, 2.0);
        assert!(matches!(young_product(&u, &weak, &zeta, false), Err(Error::Hypothesis(_))));
        assert!(young_product(&u, &weak, &zeta, true).is_ok());
    }
}
