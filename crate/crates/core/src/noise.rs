//! Gaussian white noise on a grid, the Brownian sheet, deterministic drivers,
//! coordinate filtrations and conditional expectations.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{FieldKind, Grid, GridField};
use crate::increments::IndexSet;
use crate::rng::{fill_normals, NormalStream, DRIVER_STREAM, NOISE_STREAM, RESAMPLE_STREAM};

/// Default ceiling on the bytes of one noise realization held in memory.
pub const DEFAULT_MEMORY_CAP: usize = 2 << 30;

/// Largest grid accepted by the fBm sheet driver.
pub const MAX_FBM_CELLS: usize = 512;

/// Samples generated per parallel batch before scattering into the field.
const BATCH: usize = 32;

/// Cell masses `ΔW_c ~ N(0, |c|)` for samples `offset .. offset+M` of a seeded draw.
///
/// Sample `s` of the draw is the same whatever chunk it is generated in.
#[derive(Clone, Debug)]
pub struct NoiseSample {
    pub cells: GridField,
    pub seed: u64,
    /// Global index of the first sample.
    pub offset: usize,
}

impl NoiseSample {
    pub fn grid(&self) -> Grid {
        self.cells.grid
    }

    pub fn samples(&self) -> usize {
        self.cells.samples
    }

    /// Same draw on a grid coarser by `factor`: cell masses are summed.
    pub fn aggregate(&self, factor: usize) -> Result<NoiseSample> {
        Ok(NoiseSample { cells: self.cells.aggregate_cells(factor)?, seed: self.seed, offset: self.offset })
    }
}

fn check_memory(grid: &Grid, count: usize, cap: usize) -> Result<()> {
    let bytes = grid.cell_count().saturating_mul(count).saturating_mul(8);
    if bytes > cap {
        return Err(Error::Resource(format!(
            "{count} samples on {} cells need {bytes} bytes, cap is {cap}; draw in chunks",
            grid.cell_count()
        )));
    }
    Ok(())
}

/// Fills a cell field with scaled normals from `stream` for the global samples
/// `offset .. offset + field.samples`.
fn fill_field(field: &mut GridField, seed: u64, stream: u64, offset: usize) {
    let m = field.samples;
    let cells = field.grid.cell_count();
    let scale = field.grid.cell_volume().sqrt();
    for start in (0..m).step_by(BATCH) {
        let end = (start + BATCH).min(m);
        let rows: Vec<Vec<f64>> = (start..end)
            .into_par_iter()
            .map(|s| {
                let mut buf = vec![0.0; cells];
                fill_normals(seed, stream, (offset + s) as u64, &mut buf);
                buf
            })
            .collect();
        for (j, row) in rows.iter().enumerate() {
            let s = start + j;
            for (c, v) in row.iter().enumerate() {
                field.data[c * m + s] = scale * v;
            }
        }
    }
}

/// `M` samples of grid white noise on `[0,T]^d` with `N` cells per axis.
pub fn sample_white_noise(n: usize, t: f64, d: usize, m: usize, seed: u64) -> Result<NoiseSample> {
    sample_white_noise_chunk(Grid::new(d, n, t)?, 0, m, seed, DEFAULT_MEMORY_CAP)
}

/// Samples `offset .. offset+count` of the seeded draw, refusing to allocate
/// more than `cap` bytes.
pub fn sample_white_noise_chunk(grid: Grid, offset: usize, count: usize, seed: u64, cap: usize) -> Result<NoiseSample> {
    if count == 0 {
        return invalid("at least one sample is needed");
    }
    check_memory(&grid, count, cap)?;
    let mut cells = GridField::zeros(grid, count, FieldKind::CellDensity);
    cells.seed = Some(seed);
    fill_field(&mut cells, seed, NOISE_STREAM, offset);
    Ok(NoiseSample { cells, seed, offset })
}

/// `B(x) = ξ(1_{[0,x]})`, exact on the grid corners.
pub fn brownian_sheet(noise: &NoiseSample) -> Result<GridField> {
    noise.cells.cumulative()
}

/// Deterministic drivers `Z` used as the second integrator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriverKind {
    /// `Π x_i`.
    SmoothPoly,
    /// `Π sin(π x_i / T)`.
    Trig,
    /// One frozen realization of the fractional Brownian sheet with Hurst
    /// index `H ∈ (1/2, 1)` in every direction.
    FrozenFbmSheet { hurst: f64 },
}

/// Seed of the frozen fBm realization when none is given.
pub const DRIVER_SEED: u64 = 0x5eed_f8b5;

pub fn deterministic_driver(kind: DriverKind, n: usize, t: f64, d: usize) -> Result<GridField> {
    deterministic_driver_seeded(kind, Grid::new(d, n, t)?, DRIVER_SEED)
}

pub fn deterministic_driver_seeded(kind: DriverKind, grid: Grid, seed: u64) -> Result<GridField> {
    let t = grid.t;
    match kind {
        DriverKind::SmoothPoly => Ok(GridField::from_corner_fn(grid, |x| x.iter().product())),
        DriverKind::Trig => Ok(GridField::from_corner_fn(grid, |x| {
            x.iter().map(|v| (std::f64::consts::PI * v / t).sin()).product()
        })),
        DriverKind::FrozenFbmSheet { hurst } => fbm_sheet(grid, hurst, seed),
    }
}

/// Covariance `Π_i R_H(s_i, t_i)` realized as a mode product of 1-D Cholesky factors.
fn fbm_sheet(grid: Grid, hurst: f64, seed: u64) -> Result<GridField> {
    if !(hurst > 0.5 && hurst < 1.0) {
        return invalid(format!("Hurst index {hurst} outside (1/2, 1)"));
    }
    if grid.n > MAX_FBM_CELLS {
        return Err(Error::Resource(format!("fBm sheet limited to N <= {MAX_FBM_CELLS}, got {}", grid.n)));
    }
    let n = grid.n;
    let h = grid.spacing();
    let two_h = 2.0 * hurst;
    let cov = DMatrix::from_fn(n, n, |i, j| {
        let (s, t) = ((i + 1) as f64 * h, (j + 1) as f64 * h);
        0.5 * (s.powf(two_h) + t.powf(two_h) - (s - t).abs().powf(two_h))
    });
    let l = cov
        .cholesky()
        .ok_or_else(|| Error::Diverged("fBm covariance is not positive definite".into()))?
        .unpack();
    let d = grid.d;
    let total = n.pow(d as u32);
    let mut z = vec![0.0; total];
    fill_normals(seed, DRIVER_STREAM, 0, &mut z);
    // Apply L along each axis of the row-major N^d tensor.
    for axis in 0..d {
        let stride = n.pow((d - 1 - axis) as u32);
        let mut next = vec![0.0; total];
        for (flat, out) in next.iter_mut().enumerate() {
            let i = (flat / stride) % n;
            let base = flat - i * stride;
            *out = (0..=i).map(|k| l[(i, k)] * z[base + k * stride]).sum();
        }
        z = next;
    }
    let mut field = GridField::zeros(grid, 1, FieldKind::CornerValues);
    field.seed = Some(seed);
    let mut idx = vec![0usize; d];
    for (flat, v) in z.iter().enumerate() {
        let mut r = flat;
        for a in (0..d).rev() {
            idx[a] = r % n + 1;
            r /= n;
        }
        let p = grid.corner_index(&idx);
        field.data[p] = *v;
    }
    Ok(field)
}

/// Information generated by the noise on `{y : y_i ≤ x_i, i ∈ η}`, kept as
/// one optional threshold per axis.
#[derive(Clone, Debug, PartialEq)]
pub struct FiltrationMask {
    pub thresholds: Vec<Option<f64>>,
}

impl FiltrationMask {
    /// The trivial filtration: every cell is known.
    pub fn full(d: usize) -> Self {
        Self { thresholds: vec![None; d] }
    }

    /// Filtration indexed by the axes in `eta` at the point `x`.
    pub fn new(eta: IndexSet, x: &[f64]) -> Result<Self> {
        if x.len() != eta.dim() {
            return invalid("point and index set dimensions differ");
        }
        Ok(Self { thresholds: (0..x.len()).map(|i| eta.contains(i).then_some(x[i])).collect() })
    }

    /// Intersection of the information sets: per-axis minimum.
    pub fn compose(&self, other: &Self) -> Result<Self> {
        if self.thresholds.len() != other.thresholds.len() {
            return invalid("filtrations of different dimensions");
        }
        let thresholds = self
            .thresholds
            .iter()
            .zip(&other.thresholds)
            .map(|(a, b)| match (a, b) {
                (Some(u), Some(v)) => Some(u.min(*v)),
                (Some(u), None) | (None, Some(u)) => Some(*u),
                (None, None) => None,
            })
            .collect();
        Ok(Self { thresholds })
    }

    /// Whether the cell with lower corner index `idx` is known.
    pub fn keeps(&self, grid: &Grid, idx: &[usize]) -> bool {
        let h = grid.spacing();
        self.thresholds.iter().zip(idx).all(|(t, &i)| match t {
            Some(x) => (i + 1) as f64 * h <= x + 1e-12 * h,
            None => true,
        })
    }

    /// Known flag per cell of `grid`.
    pub fn kept_cells(&self, grid: &Grid) -> Vec<bool> {
        (0..grid.cell_count()).map(|c| self.keeps(grid, &grid.cell_multi(c))).collect()
    }
}

/// How `E[F(ξ) | G]` is computed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CondMode {
    /// Unknown cells set to their mean. Exact for functionals linear in the noise.
    Exact,
    /// Average over `k` independent redraws of the unknown cells.
    Resample { k: usize },
}

/// Copy of `noise` with the unknown cells redrawn from resample stream `r`.
pub fn resample_outside(noise: &NoiseSample, mask: &FiltrationMask, r: usize) -> NoiseSample {
    let grid = noise.grid();
    let kept = mask.kept_cells(&grid);
    let m = noise.samples();
    let scale = grid.cell_volume().sqrt();
    let mut out = noise.clone();
    let stream = RESAMPLE_STREAM + r as u64;
    let unknown: Vec<usize> = (0..kept.len()).filter(|&c| !kept[c]).collect();
    let columns: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|s| {
            let mut st = NormalStream::new(noise.seed, stream, (noise.offset + s) as u64);
            unknown
                .iter()
                .map(|&c| {
                    st.seek(c as u64);
                    scale * st.next_normal()
                })
                .collect()
        })
        .collect();
    for (s, col) in columns.iter().enumerate() {
        for (&c, v) in unknown.iter().zip(col) {
            out.cells.data[c * m + s] = *v;
        }
    }
    out
}

/// Copy of `noise` with the unknown cells set to zero.
pub fn zero_outside(noise: &NoiseSample, mask: &FiltrationMask) -> NoiseSample {
    let grid = noise.grid();
    let m = noise.samples();
    let mut out = noise.clone();
    for (c, keep) in mask.kept_cells(&grid).into_iter().enumerate() {
        if !keep {
            out.cells.data[c * m..(c + 1) * m].fill(0.0);
        }
    }
    out
}

/// `E[F(ξ) | G]` for a functional returning a flat vector per call.
///
/// `F` may return any number of values as long as the length is the same for
/// every input; averages are taken entrywise. `linear` states that `F` is
/// linear in the noise, which [`CondMode::Exact`] requires.
pub fn conditional_expectation<F>(
    functional: F,
    mask: &FiltrationMask,
    noise: &NoiseSample,
    mode: CondMode,
    linear: bool,
) -> Result<Vec<f64>>
where
    F: Fn(&NoiseSample) -> Result<Vec<f64>>,
{
    match mode {
        CondMode::Exact => {
            if !linear {
                return Err(Error::Unsupported(
                    "exact conditioning needs a functional linear in the noise; use resampling".into(),
                ));
            }
            functional(&zero_outside(noise, mask))
        }
        CondMode::Resample { k } => {
            let (a, b) = conditional_split(&functional, mask, noise, k)?;
            Ok(a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect())
        }
    }
}

/// Two independent resampled estimates of `E[F(ξ) | G]`, each averaging `k/2`
/// redraws. Their product is an unbiased estimate of the squared conditional mean.
pub fn conditional_split<F>(functional: F, mask: &FiltrationMask, noise: &NoiseSample, k: usize) -> Result<(Vec<f64>, Vec<f64>)>
where
    F: Fn(&NoiseSample) -> Result<Vec<f64>>,
{
    if k < 2 || k % 2 != 0 {
        return invalid(format!("resample count {k} must be even and at least 2"));
    }
    let mut halves: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for r in 0..k {
        let v = functional(&resample_outside(noise, mask, r))?;
        let acc = &mut halves[r % 2];
        if acc.is_empty() {
            *acc = vec![0.0; v.len()];
        }
        if acc.len() != v.len() {
            return invalid("functional returned vectors of different lengths");
        }
        for (a, x) in acc.iter_mut().zip(&v) {
            *a += x;
        }
    }
    let w = 2.0 / k as f64;
    let [mut a, mut b] = halves;
    a.iter_mut().chain(b.iter_mut()).for_each(|v| *v *= w);
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_reproduce_the_full_draw() {
        let g = Grid::new(2, 8, 1.0).unwrap();
        let full = sample_white_noise_chunk(g, 0, 10, 5, DEFAULT_MEMORY_CAP).unwrap();
        let part = sample_white_noise_chunk(g, 4, 3, 5, DEFAULT_MEMORY_CAP).unwrap();
        for c in 0..g.cell_count() {
            assert_eq!(&full.cells.at(c)[4..7], part.cells.at(c));
        }
        assert!(sample_white_noise_chunk(g, 0, 10, 5, 100).is_err());
    }

    #[test]
    fn mask_composition_and_cells() {
        let g = Grid::new(2, 4, 1.0).unwrap();
        let a = FiltrationMask::new(IndexSet::from_axes(&[0], 2).unwrap(), &[0.5, 0.0]).unwrap();
        let b = FiltrationMask::new(IndexSet::full(2).unwrap(), &[0.75, 0.25]).unwrap();
        let c = a.compose(&b).unwrap();
        assert_eq!(c.thresholds, vec![Some(0.5), Some(0.25)]);
        assert!(c.keeps(&g, &[1, 0]));
        assert!(!c.keeps(&g, &[2, 0]));
        assert!(!c.keeps(&g, &[0, 1]));
        assert_eq!(a.kept_cells(&g).iter().filter(|k| **k).count(), 8);
    }

    #[test]
    fn fbm_marginal_variance() {
        let g = Grid::new(2, 16, 1.0).unwrap();
        let h = 0.75;
        // Variance at corner (i, j) is (ih)^{2H} (jh)^{2H}; check over many seeds.
        let mut acc = 0.0;
        let seeds = 400;
        for s in 0..seeds {
            let z = deterministic_driver_seeded(DriverKind::FrozenFbmSheet { hurst: h }, g, s).unwrap();
            acc += z.corner(&[16, 8])[0].powi(2);
        }
        let expect = 0.5f64.powf(2.0 * h);
        assert!((acc / seeds as f64 - expect).abs() < 0.25 * expect);
        assert!(deterministic_driver(DriverKind::FrozenFbmSheet { hurst: 0.4 }, 16, 1.0, 2).is_err());
    }
}
