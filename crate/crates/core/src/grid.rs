//! Uniform dyadic grids over `[0,T]^d` and Monte Carlo fields living on them.
//!
//! Field data is point-major with samples innermost: the `M` sample values of
//! point `p` occupy `data[p*M .. (p+1)*M]`.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::increments::{corners, IndexSet, MAX_DIM};

/// `N` cells per axis of side `h = T/N`, where `h` is a power of two.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub d: usize,
    pub n: usize,
    pub t: f64,
}

impl Grid {
    pub fn new(d: usize, n: usize, t: f64) -> Result<Self> {
        if d == 0 || d > MAX_DIM {
            return invalid(format!("dimension {d} outside 1..={MAX_DIM}"));
        }
        if n == 0 || !n.is_power_of_two() {
            return invalid(format!("cells per axis N={n} must be a power of two"));
        }
        if !(t > 0.0) || !t.is_finite() {
            return invalid(format!("domain size T={t} must be positive"));
        }
        let h = t / n as f64;
        if h.log2().fract() != 0.0 {
            return invalid(format!("cell side T/N={h} must be a power of two"));
        }
        Ok(Self { d, n, t })
    }

    pub fn spacing(&self) -> f64 {
        self.t / self.n as f64
    }

    /// `L` with `h = 2^{-L}`.
    pub fn level(&self) -> i32 {
        -(self.spacing().log2() as i32)
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.d as i32)
    }

    pub fn cell_count(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn corner_count(&self) -> usize {
        (self.n + 1).pow(self.d as u32)
    }

    pub fn cell_index(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.n + i)
    }

    pub fn corner_index(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * (self.n + 1) + i)
    }

    pub fn cell_multi(&self, mut flat: usize) -> Vec<usize> {
        let mut out = vec![0; self.d];
        for a in (0..self.d).rev() {
            out[a] = flat % self.n;
            flat /= self.n;
        }
        out
    }

    pub fn corner_multi(&self, mut flat: usize) -> Vec<usize> {
        let mut out = vec![0; self.d];
        for a in (0..self.d).rev() {
            out[a] = flat % (self.n + 1);
            flat /= self.n + 1;
        }
        out
    }

    pub fn corner_coords(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().map(|&i| i as f64 * self.spacing()).collect()
    }

    /// Corner index of a point that lies exactly on the grid.
    pub fn corner_of(&self, x: &[f64]) -> Result<Vec<usize>> {
        if x.len() != self.d {
            return invalid(format!("point of length {} in dimension {}", x.len(), self.d));
        }
        let h = self.spacing();
        x.iter()
            .map(|&v| {
                let k = v / h;
                if k.fract() != 0.0 || k < 0.0 || k > self.n as f64 {
                    invalid(format!("coordinate {v} is not a corner of the grid with spacing {h}"))
                } else {
                    Ok(k as usize)
                }
            })
            .collect()
    }

    /// Grid with `factor` times fewer cells per axis.
    pub fn coarsen(&self, factor: usize) -> Result<Grid> {
        if factor == 0 || self.n % factor != 0 {
            return invalid(format!("cannot coarsen N={} by {factor}", self.n));
        }
        Grid::new(self.d, self.n / factor, self.t)
    }

    /// Iterates all multi-indices in `[lo, hi)` in row-major order.
    pub fn for_each_box(lo: &[usize], hi: &[usize], mut f: impl FnMut(&[usize])) {
        let d = lo.len();
        if (0..d).any(|a| lo[a] >= hi[a]) {
            return;
        }
        let mut idx = lo.to_vec();
        loop {
            f(&idx);
            let mut a = d;
            loop {
                if a == 0 {
                    return;
                }
                a -= 1;
                idx[a] += 1;
                if idx[a] < hi[a] {
                    break;
                }
                idx[a] = lo[a];
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    /// One value per cell: the mass of the cell (density integrated over it).
    CellDensity,
    /// One value per grid corner.
    CornerValues,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    pub grid: Grid,
    pub samples: usize,
    pub kind: FieldKind,
    pub seed: Option<u64>,
    pub data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FieldHeader {
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "T")]
    t: f64,
    d: usize,
    #[serde(rename = "M")]
    m: usize,
    kind: FieldKind,
    seed: Option<u64>,
    layout: String,
}

const LAYOUT: &str = "point-major, samples innermost, f64 little-endian";

impl GridField {
    pub fn zeros(grid: Grid, samples: usize, kind: FieldKind) -> Self {
        let points = match kind {
            FieldKind::CellDensity => grid.cell_count(),
            FieldKind::CornerValues => grid.corner_count(),
        };
        Self { grid, samples, kind, seed: None, data: vec![0.0; points * samples] }
    }

    /// Deterministic corner field `f(x)`.
    pub fn from_corner_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut out = Self::zeros(grid, 1, FieldKind::CornerValues);
        for p in 0..grid.corner_count() {
            out.data[p] = f(&grid.corner_coords(&grid.corner_multi(p)));
        }
        out
    }

    pub fn points(&self) -> usize {
        self.data.len() / self.samples
    }

    pub fn is_deterministic(&self) -> bool {
        self.samples == 1
    }

    pub fn at(&self, p: usize) -> &[f64] {
        &self.data[p * self.samples..(p + 1) * self.samples]
    }

    pub fn at_mut(&mut self, p: usize) -> &mut [f64] {
        let m = self.samples;
        &mut self.data[p * m..(p + 1) * m]
    }

    /// Value of sample `s` at point `p`; deterministic fields broadcast.
    pub fn value(&self, p: usize, s: usize) -> f64 {
        if self.samples == 1 {
            self.data[p]
        } else {
            self.data[p * self.samples + s]
        }
    }

    pub fn corner(&self, idx: &[usize]) -> &[f64] {
        debug_assert_eq!(self.kind, FieldKind::CornerValues);
        self.at(self.grid.corner_index(idx))
    }

    pub fn sample(&self, s: usize) -> Vec<f64> {
        (0..self.points()).map(|p| self.value(p, s)).collect()
    }

    pub fn same_shape(&self, other: &GridField) -> bool {
        self.grid == other.grid && self.kind == other.kind
    }

    /// Rectangular increment between corner multi-indices, one value per sample.
    pub fn increment(&self, theta: IndexSet, x: &[usize], y: &[usize]) -> Vec<f64> {
        let mut out = vec![0.0; self.samples];
        for (sign, c) in corners(theta, x, y) {
            for (o, v) in out.iter_mut().zip(self.corner(&c)) {
                *o += sign * v;
            }
        }
        out
    }

    /// Corner field of cumulative cell sums: the value at corner `i` is the total
    /// mass of the cells below `i` in every axis. Zero on the faces through 0.
    pub fn cumulative(&self) -> Result<GridField> {
        if self.kind != FieldKind::CellDensity {
            return invalid("cumulative sums need a cell field");
        }
        let g = self.grid;
        let m = self.samples;
        let mut out = GridField::zeros(g, m, FieldKind::CornerValues);
        out.seed = self.seed;
        for c in 0..g.cell_count() {
            let idx: Vec<usize> = g.cell_multi(c).iter().map(|i| i + 1).collect();
            let p = g.corner_index(&idx);
            out.data[p * m..(p + 1) * m].copy_from_slice(self.at(c));
        }
        let side = g.n + 1;
        for axis in 0..g.d {
            let stride = side.pow((g.d - 1 - axis) as u32) * m;
            for p in 0..g.corner_count() {
                let i = (p / side.pow((g.d - 1 - axis) as u32)) % side;
                if i == 0 {
                    continue;
                }
                let (lo, hi) = out.data.split_at_mut(p * m);
                let prev = &lo[p * m - stride..p * m - stride + m];
                for (v, q) in hi[..m].iter_mut().zip(prev) {
                    *v += q;
                }
            }
        }
        Ok(out)
    }

    /// Sum of cell masses over blocks of `factor^d` cells.
    pub fn aggregate_cells(&self, factor: usize) -> Result<GridField> {
        if self.kind != FieldKind::CellDensity {
            return invalid("aggregation needs a cell field");
        }
        let coarse = self.grid.coarsen(factor)?;
        let m = self.samples;
        let mut out = GridField::zeros(coarse, m, FieldKind::CellDensity);
        out.seed = self.seed;
        for c in 0..self.grid.cell_count() {
            let idx: Vec<usize> = self.grid.cell_multi(c).iter().map(|i| i / factor).collect();
            let q = coarse.cell_index(&idx);
            for (o, v) in out.data[q * m..(q + 1) * m].iter_mut().zip(self.at(c)) {
                *o += v;
            }
        }
        Ok(out)
    }

    /// Restriction of a corner field to the corners of a coarser grid.
    pub fn restrict_corners(&self, factor: usize) -> Result<GridField> {
        if self.kind != FieldKind::CornerValues {
            return invalid("restriction needs a corner field");
        }
        let coarse = self.grid.coarsen(factor)?;
        let m = self.samples;
        let mut out = GridField::zeros(coarse, m, FieldKind::CornerValues);
        out.seed = self.seed;
        for p in 0..coarse.corner_count() {
            let idx: Vec<usize> = coarse.corner_multi(p).iter().map(|i| i * factor).collect();
            out.data[p * m..(p + 1) * m].copy_from_slice(self.corner(&idx));
        }
        Ok(out)
    }

    /// Pointwise map, shape preserving.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridField {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v = f(*v));
        out
    }

    /// Pointwise combination; a deterministic operand is broadcast.
    pub fn zip_with(&self, other: &GridField, f: impl Fn(f64, f64) -> f64) -> Result<GridField> {
        if !self.same_shape(other) {
            return invalid("fields live on different grids or have different kinds");
        }
        let m = self.samples.max(other.samples);
        if self.samples != other.samples && self.samples != 1 && other.samples != 1 {
            return invalid(format!("sample counts {} and {} differ", self.samples, other.samples));
        }
        let mut out = GridField::zeros(self.grid, m, self.kind);
        out.seed = self.seed.or(other.seed);
        for p in 0..self.points() {
            for s in 0..m {
                out.data[p * m + s] = f(self.value(p, s), other.value(p, s));
            }
        }
        Ok(out)
    }

    fn paths(stem: &Path) -> (PathBuf, PathBuf) {
        (stem.with_extension("bin"), stem.with_extension("json"))
    }

    /// Writes `<stem>.bin` and the `<stem>.json` header.
    pub fn write(&self, stem: &Path) -> Result<()> {
        let (bin, json) = Self::paths(stem);
        let header = FieldHeader {
            n: self.grid.n,
            t: self.grid.t,
            d: self.grid.d,
            m: self.samples,
            kind: self.kind,
            seed: self.seed,
            layout: LAYOUT.into(),
        };
        fs::write(json, serde_json::to_string_pretty(&header)?)?;
        let mut bytes = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::File::create(bin)?.write_all(&bytes)?;
        Ok(())
    }

    pub fn read(stem: &Path) -> Result<GridField> {
        let (bin, json) = Self::paths(stem);
        let header: FieldHeader = serde_json::from_str(&fs::read_to_string(json)?)?;
        let grid = Grid::new(header.d, header.n, header.t)?;
        let mut out = GridField::zeros(grid, header.m, header.kind);
        out.seed = header.seed;
        let mut bytes = Vec::new();
        fs::File::open(bin)?.read_to_end(&mut bytes)?;
        if bytes.len() != out.data.len() * 8 {
            return Err(Error::InvalidArgument(format!(
                "binary holds {} bytes, header implies {}",
                bytes.len(),
                out.data.len() * 8
            )));
        }
        for (v, chunk) in out.data.iter_mut().zip(bytes.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().expect("chunk of 8"));
        }
        Ok(out)
    }

    /// Per-point mean and standard deviation over samples as CSV.
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("point,mean,std\n");
        for p in 0..self.points() {
            let v = self.at(p);
            s.push_str(&format!("{p},{},{}\n", crate::stats::mean(v), crate::stats::variance(v).sqrt()));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_validation() {
        assert!(Grid::new(2, 6, 1.0).is_err());
        assert!(Grid::new(2, 8, 3.0).is_err());
        assert!(Grid::new(2, 8, 0.5).is_ok());
        let g = Grid::new(2, 4, 1.0).unwrap();
        assert_eq!(g.level(), 2);
        assert_eq!(g.corner_of(&[0.25, 1.0]).unwrap(), vec![1, 4]);
        assert!(g.corner_of(&[0.3, 1.0]).is_err());
    }

    #[test]
    fn cumulative_of_ones_is_area() {
        let g = Grid::new(2, 4, 1.0).unwrap();
        let mut f = GridField::zeros(g, 2, FieldKind::CellDensity);
        f.data.iter_mut().for_each(|v| *v = g.cell_volume());
        let c = f.cumulative().unwrap();
        let v = c.corner(&[2, 3]);
        assert!((v[0] - 0.5 * 0.75).abs() < 1e-15 && (v[1] - 0.375).abs() < 1e-15);
        assert_eq!(c.corner(&[0, 3]), &[0.0, 0.0]);
    }

    #[test]
    fn box_iteration_order() {
        let mut seen = Vec::new();
        Grid::for_each_box(&[0, 1], &[2, 3], |i| seen.push(i.to_vec()));
        assert_eq!(seen, vec![vec![0, 1], vec![0, 2], vec![1, 1], vec![1, 2]]);
    }
}
