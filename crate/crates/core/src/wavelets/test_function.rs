use std::fmt;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::grid::{FieldKind, Grid, GridField};

type Source = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A compactly supported function stored by its cell values on the uniform
/// grid of side `2^{-J}`.
///
/// Values are cell averages for indicators and midpoint samples otherwise.
/// When built from a closure the closure is kept, so rescaling resamples it
/// exactly instead of interpolating stored values.
#[derive(Clone)]
pub struct TestFunction {
    level: u32,
    lo: Vec<i64>,
    shape: Vec<usize>,
    values: Vec<f64>,
    support: (Vec<f64>, Vec<f64>),
    /// Number of available derivatives (metadata only).
    pub smoothness: u32,
    source: Option<Source>,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction")
            .field("level", &self.level)
            .field("lo", &self.lo)
            .field("shape", &self.shape)
            .field("support", &self.support)
            .finish()
    }
}

/// Per-axis bump `(1 − u²)^4` on `[−1, 1]`.
pub fn bump_profile(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - u * u).powi(4)
    }
}

fn check_box(lo: &[f64], hi: &[f64]) -> Result<()> {
    if lo.len() != hi.len() || lo.is_empty() {
        return invalid("support corners must have the same positive length");
    }
    if lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
        return invalid(format!("empty support box {lo:?}..{hi:?}"));
    }
    Ok(())
}

impl TestFunction {
    /// Midpoint samples of `f` on the cells meeting the support box.
    pub fn from_fn<F>(level: u32, lo: &[f64], hi: &[f64], smoothness: u32, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        check_box(lo, hi)?;
        let mut out = Self::empty_on(level, lo, hi, smoothness);
        out.source = Some(Arc::new(f));
        out.resample();
        Ok(out)
    }

    fn empty_on(level: u32, lo: &[f64], hi: &[f64], smoothness: u32) -> Self {
        let s = (1u64 << level) as f64;
        let first: Vec<i64> = lo.iter().map(|v| (v * s).floor() as i64).collect();
        let shape: Vec<usize> =
            hi.iter().zip(&first).map(|(v, &a)| ((v * s).ceil() as i64 - a).max(1) as usize).collect();
        let len = shape.iter().product();
        Self {
            level,
            lo: first,
            shape,
            values: vec![0.0; len],
            support: (lo.to_vec(), hi.to_vec()),
            smoothness,
            source: None,
        }
    }

    fn resample(&mut self) {
        let src = self.source.clone().expect("resample needs a source");
        let h = self.spacing();
        let (slo, shi) = self.support.clone();
        let d = self.dim();
        let mut idx = vec![0usize; d];
        let mut x = vec![0.0; d];
        for flat in 0..self.values.len() {
            self.unravel(flat, &mut idx);
            let mut inside = true;
            for a in 0..d {
                x[a] = (self.lo[a] + idx[a] as i64) as f64 * h + 0.5 * h;
                inside &= x[a] >= slo[a] && x[a] <= shi[a];
            }
            self.values[flat] = if inside { src(&x) } else { 0.0 };
        }
    }

    /// Product bump supported on the box `[lo, hi]`.
    pub fn bump_on(level: u32, lo: &[f64], hi: &[f64]) -> Result<Self> {
        check_box(lo, hi)?;
        let (l, u) = (lo.to_vec(), hi.to_vec());
        Self::from_fn(level, lo, hi, 3, move |x| {
            x.iter()
                .enumerate()
                .map(|(a, &v)| bump_profile(2.0 * (v - l[a]) / (u[a] - l[a]) - 1.0))
                .product()
        })
    }

    /// The reference bump supported in `[1/4, 3/4]^d`.
    pub fn bump(d: usize, level: u32) -> Result<Self> {
        Self::bump_on(level, &vec![0.25; d], &vec![0.75; d])
    }

    /// `1_{[lo,hi)}` with exact cell averages.
    pub fn indicator(level: u32, lo: &[f64], hi: &[f64]) -> Result<Self> {
        check_box(lo, hi)?;
        let mut out = Self::empty_on(level, lo, hi, 0);
        let h = out.spacing();
        let d = out.dim();
        let mut idx = vec![0usize; d];
        for flat in 0..out.values.len() {
            out.unravel(flat, &mut idx);
            let mut frac = 1.0;
            for a in 0..d {
                let c0 = (out.lo[a] + idx[a] as i64) as f64 * h;
                let overlap = (hi[a].min(c0 + h) - lo[a].max(c0)).max(0.0);
                frac *= overlap / h;
            }
            out.values[flat] = frac;
        }
        let (l, u) = (lo.to_vec(), hi.to_vec());
        out.source = Some(Arc::new(move |x: &[f64]| {
            if x.iter().enumerate().all(|(a, &v)| v >= l[a] && v < u[a]) {
                1.0
            } else {
                0.0
            }
        }));
        Ok(out)
    }

    /// Builds a function from explicit cell values on `[lo·2^{-J}, (lo+shape)·2^{-J})`.
    pub fn from_cells(level: u32, lo: Vec<i64>, shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if lo.len() != shape.len() || values.len() != shape.iter().product::<usize>() {
            return invalid("cell array does not match its shape");
        }
        let h = 1.0 / (1u64 << level) as f64;
        let slo: Vec<f64> = lo.iter().map(|&v| v as f64 * h).collect();
        let shi: Vec<f64> = lo.iter().zip(&shape).map(|(&v, &n)| (v + n as i64) as f64 * h).collect();
        Ok(Self { level, lo, shape, values, support: (slo, shi), smoothness: 0, source: None })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn spacing(&self) -> f64 {
        1.0 / (1u64 << self.level) as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim() as i32)
    }

    pub fn first_cell(&self) -> &[i64] {
        &self.lo
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn support(&self) -> (&[f64], &[f64]) {
        (&self.support.0, &self.support.1)
    }

    pub(crate) fn unravel(&self, mut flat: usize, out: &mut [usize]) {
        for a in (0..self.dim()).rev() {
            out[a] = flat % self.shape[a];
            flat /= self.shape[a];
        }
    }

    /// Value of the cell with absolute index `idx`, zero outside the stored box.
    pub fn cell_value(&self, idx: &[i64]) -> f64 {
        let mut flat = 0usize;
        for a in 0..self.dim() {
            let r = idx[a] - self.lo[a];
            if r < 0 || r as usize >= self.shape[a] {
                return 0.0;
            }
            flat = flat * self.shape[a] + r as usize;
        }
        self.values[flat]
    }

    /// Pointwise value: the closure when available, else the cell lookup.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let (lo, hi) = self.support();
        if x.iter().enumerate().any(|(a, &v)| v < lo[a] || v > hi[a]) {
            return 0.0;
        }
        if let Some(src) = &self.source {
            return src(x);
        }
        let s = (1u64 << self.level) as f64;
        let idx: Vec<i64> = x.iter().map(|v| (v * s).floor() as i64).collect();
        self.cell_value(&idx)
    }

    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_volume()
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum::<f64>() * self.cell_volume()
    }

    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() * self.cell_volume()).sqrt()
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// `ψ^λ_x(y) = Π λ_i^{-1} ψ((y − x)/λ)` at the same resolution.
    pub fn rescale(&self, x: &[f64], lambda: &[f64]) -> Result<Self> {
        self.rescale_at(x, lambda, self.level)
    }

    /// Rescaled copy sampled at resolution `2^{-level}`.
    pub fn rescale_at(&self, x: &[f64], lambda: &[f64], level: u32) -> Result<Self> {
        let d = self.dim();
        if x.len() != d || lambda.len() != d {
            return invalid("rescale point and scales must match the dimension");
        }
        if lambda.iter().any(|&l| !(l > 0.0)) {
            return invalid("scales must be strictly positive");
        }
        let (slo, shi) = self.support();
        let lo: Vec<f64> = (0..d).map(|a| x[a] + lambda[a] * slo[a]).collect();
        let hi: Vec<f64> = (0..d).map(|a| x[a] + lambda[a] * shi[a]).collect();
        let factor: f64 = lambda.iter().map(|l| 1.0 / l).product();
        let base = self.clone();
        let (xs, ls) = (x.to_vec(), lambda.to_vec());
        let mut out = Self::empty_on(level, &lo, &hi, self.smoothness);
        out.source = Some(Arc::new(move |y: &[f64]| {
            let z: Vec<f64> = (0..y.len()).map(|a| (y[a] - xs[a]) / ls[a]).collect();
            factor * base.eval(&z)
        }));
        out.resample();
        Ok(out)
    }

    /// Whether the support lies in `[margin, T − margin]^d`.
    pub fn within(&self, t: f64, margin: f64) -> bool {
        let (lo, hi) = self.support();
        lo.iter().all(|&v| v >= margin) && hi.iter().all(|&v| v <= t - margin)
    }

    /// `aψ + bχ` on the union of both cell boxes (same resolution).
    pub fn combine(a: f64, f: &Self, b: f64, g: &Self) -> Result<Self> {
        if f.level != g.level || f.dim() != g.dim() {
            return invalid("combined test functions need the same resolution and dimension");
        }
        let d = f.dim();
        let lo: Vec<i64> = (0..d).map(|i| f.lo[i].min(g.lo[i])).collect();
        let hi: Vec<i64> =
            (0..d).map(|i| (f.lo[i] + f.shape[i] as i64).max(g.lo[i] + g.shape[i] as i64)).collect();
        let shape: Vec<usize> = (0..d).map(|i| (hi[i] - lo[i]) as usize).collect();
        let mut values = vec![0.0; shape.iter().product()];
        let mut idx = vec![0i64; d];
        for (flat, v) in values.iter_mut().enumerate() {
            let mut r = flat;
            for i in (0..d).rev() {
                idx[i] = lo[i] + (r % shape[i]) as i64;
                r /= shape[i];
            }
            *v = a * f.cell_value(&idx) + b * g.cell_value(&idx);
        }
        let mut out = Self::from_cells(f.level, lo, shape, values)?;
        let slo: Vec<f64> = (0..d).map(|i| f.support.0[i].min(g.support.0[i])).collect();
        let shi: Vec<f64> = (0..d).map(|i| f.support.1[i].max(g.support.1[i])).collect();
        out.support = (slo, shi);
        out.smoothness = f.smoothness.min(g.smoothness);
        Ok(out)
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= c);
        if let Some(src) = self.source.clone() {
            out.source = Some(Arc::new(move |x: &[f64]| c * src(x)));
        }
        out
    }

    /// Integrals of ψ over the blocks of side `2^{-n_i}` meeting its cell box.
    /// Returns the first block index per axis, the block counts and the integrals.
    pub fn block_integrals(&self, n: &[u32]) -> Result<(Vec<i64>, Vec<usize>, Vec<f64>)> {
        let d = self.dim();
        if n.len() != d {
            return invalid("level must have one entry per axis");
        }
        if n.iter().any(|&k| k > self.level) {
            return Err(Error::Resolution(format!(
                "blocks at level {n:?} are finer than the test-function resolution {}",
                self.level
            )));
        }
        let ratio: Vec<i64> = n.iter().map(|&k| 1i64 << (self.level - k)).collect();
        let blo: Vec<i64> = (0..d).map(|a| self.lo[a].div_euclid(ratio[a])).collect();
        let bshape: Vec<usize> = (0..d)
            .map(|a| ((self.lo[a] + self.shape[a] as i64 - 1).div_euclid(ratio[a]) - blo[a] + 1) as usize)
            .collect();
        let mut out = vec![0.0; bshape.iter().product()];
        let vol = self.cell_volume();
        let mut idx = vec![0usize; d];
        for (flat, &v) in self.values.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            self.unravel(flat, &mut idx);
            let mut b = 0usize;
            for a in 0..d {
                let k = (self.lo[a] + idx[a] as i64).div_euclid(ratio[a]) - blo[a];
                b = b * bshape[a] + k as usize;
            }
            out[b] += v * vol;
        }
        Ok((blo, bshape, out))
    }

    /// Sparse averages of ψ over the cells of `grid`: `(cell index, average)`.
    pub fn grid_averages(&self, grid: &Grid) -> Result<Vec<(usize, f64)>> {
        if grid.d != self.dim() {
            return invalid("grid and test function dimensions differ");
        }
        let level = grid.level();
        if level < 0 || level as u32 > self.level {
            return Err(Error::Resolution(format!(
                "grid level {level} is finer than the test-function resolution {}",
                self.level
            )));
        }
        let (blo, bshape, ints) = self.block_integrals(&vec![level as u32; grid.d])?;
        let vol = grid.cell_volume();
        let mut out = Vec::new();
        let mut idx = vec![0usize; grid.d];
        for (flat, &v) in ints.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let mut r = flat;
            for a in (0..grid.d).rev() {
                let k = blo[a] + (r % bshape[a]) as i64;
                if k < 0 || k as usize >= grid.n {
                    return invalid("test function support leaves the grid domain");
                }
                idx[a] = k as usize;
                r /= bshape[a];
            }
            out.push((grid.cell_index(&idx), v / vol));
        }
        Ok(out)
    }

    /// `∫ ρ ψ` for a cell-mass field, one value per sample.
    pub fn pair_cells(&self, field: &GridField) -> Result<Vec<f64>> {
        if field.kind != FieldKind::CellDensity {
            return invalid("pairing needs a cell field");
        }
        let mut out = vec![0.0; field.samples];
        for (c, w) in self.grid_averages(&field.grid)? {
            for (o, v) in out.iter_mut().zip(field.at(c)) {
                *o += w * v;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rescale_identity_and_mass() {
        let psi = TestFunction::bump(2, 8).unwrap();
        let same = psi.rescale(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_eq!(same.values(), psi.values());
        let r = psi.rescale(&[0.1, 0.2], &[0.5, 0.25]).unwrap();
        assert!((r.integral() - psi.integral()).abs() < 1e-3 * psi.integral());
        assert!(r.within(1.0, 0.0));
    }

    #[test]
    fn rescale_sup_scales() {
        let psi = TestFunction::from_fn(12, &[0.0], &[1.0], 3, |x| bump_profile(2.0 * x[0] - 1.0)).unwrap();
        let r = psi.rescale(&[0.25], &[0.5]).unwrap();
        assert!((r.sup() - 2.0 * psi.sup()).abs() < 1e-5);
        assert!(psi.rescale(&[0.0], &[0.0]).is_err());
    }

    #[test]
    fn indicator_blocks() {
        let f = TestFunction::indicator(4, &[0.0, 0.25], &[0.5, 1.0]).unwrap();
        assert!((f.integral() - 0.375).abs() < 1e-15);
        let (_, shape, ints) = f.block_integrals(&[1, 2]).unwrap();
        assert_eq!(shape, vec![1, 3]);
        assert!(ints.iter().all(|v| (v - 0.125).abs() < 1e-15));
    }

    #[test]
    fn combination_is_linear() {
        let a = TestFunction::indicator(3, &[0.0], &[0.5]).unwrap();
        let b = TestFunction::indicator(3, &[0.25], &[1.0]).unwrap();
        let c = TestFunction::combine(2.0, &a, -1.0, &b).unwrap();
        assert!((c.integral() - (2.0 * 0.5 - 0.75)).abs() < 1e-15);
    }
}
