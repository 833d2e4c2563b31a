use crate::error::{invalid, Error, Result};
use crate::increments::IndexSet;

use super::{Kind, TestFunction, WaveletBasis1D};

/// Points `Σ 2^{-n_i} k_i e_i` of `[0,T]^d`, optionally projected onto the axes of `zeta`.
#[derive(Clone, Debug, PartialEq)]
pub struct DyadicGrid {
    pub level: Vec<u32>,
    pub t: f64,
    pub zeta: Option<IndexSet>,
}

impl DyadicGrid {
    pub fn new(level: Vec<u32>, t: f64) -> Self {
        Self { level, t, zeta: None }
    }

    pub fn projected(level: Vec<u32>, t: f64, zeta: IndexSet) -> Self {
        Self { level, t, zeta: Some(zeta) }
    }

    fn counts(&self) -> Vec<usize> {
        self.level
            .iter()
            .enumerate()
            .map(|(a, &n)| match self.zeta {
                Some(z) if !z.contains(a) => 1,
                _ => (self.t * (1u64 << n) as f64).floor() as usize + 1,
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.counts().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All points in row-major order.
    pub fn points(&self) -> Vec<Vec<f64>> {
        let counts = self.counts();
        let d = counts.len();
        let mut out = Vec::with_capacity(self.len());
        let zero = vec![0usize; d];
        crate::grid::Grid::for_each_box(&zero, &counts, |k| {
            out.push((0..d).map(|a| k[a] as f64 / (1u64 << self.level[a]) as f64).collect());
        });
        out
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        y.iter().enumerate().all(|(a, &v)| {
            let k = v * (1u64 << self.level[a]) as f64;
            let on_axis = match self.zeta {
                Some(z) if !z.contains(a) => v == 0.0,
                _ => true,
            };
            on_axis && k.fract() == 0.0 && v >= 0.0 && v <= self.t
        })
    }
}

/// Tensor wavelets `φ̂^ζ(x) = Π_{i∉ζ} φ(x_i) Π_{i∈ζ} φ̂(x_i)` in `d` dimensions.
#[derive(Clone, Debug)]
pub struct WaveletBasisD {
    pub base: WaveletBasis1D,
    pub d: usize,
}

fn kind_for(zeta: IndexSet, axis: usize) -> Kind {
    if zeta.contains(axis) {
        Kind::Detail
    } else {
        Kind::Scaling
    }
}

impl WaveletBasisD {
    pub fn new(base: WaveletBasis1D, d: usize) -> Self {
        Self { base, d }
    }

    pub fn haar(d: usize) -> Self {
        Self::new(WaveletBasis1D::haar(), d)
    }

    pub fn is_haar(&self) -> bool {
        self.base.is_haar()
    }

    /// `φ̂^{ζ,n}_y(x)`.
    pub fn eval(&self, zeta: IndexSet, n: &[u32], y: &[f64], x: &[f64]) -> f64 {
        (0..self.d).map(|a| self.base.eval_level(kind_for(zeta, a), n[a], y[a], x[a])).product()
    }

    /// Support box of `φ^n_y`.
    pub fn support_box(&self, n: &[u32], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (c, r) = self.base.support();
        let lo = (0..self.d).map(|a| y[a] + c / (1u64 << n[a]) as f64).collect();
        let hi = (0..self.d).map(|a| y[a] + r / (1u64 << n[a]) as f64).collect();
        (lo, hi)
    }

    fn check_resolution(&self, zeta: IndexSet, n: &[u32], psi: &TestFunction) -> Result<()> {
        if n.len() != self.d || psi.dim() != self.d || zeta.dim() != self.d {
            return invalid("level, index set and test function must match the basis dimension");
        }
        let j = psi.level();
        for a in 0..self.d {
            let extra = u32::from(zeta.contains(a) && self.is_haar());
            if n[a] + extra > j {
                return Err(Error::Resolution(format!(
                    "level {} on axis {a} is not resolved by test-function resolution {j}",
                    n[a]
                )));
            }
            if !self.is_haar() && j + 1 - n[a] > self.base.depth {
                return Err(Error::Resolution(format!(
                    "sampling depth {} too shallow for level {} at resolution {j}",
                    self.base.depth, n[a]
                )));
            }
        }
        Ok(())
    }

    /// Per-axis midpoint weights of the 1-D factors over the cells of `psi`.
    fn axis_weights(&self, zeta: IndexSet, n: &[u32], y: &[f64], psi: &TestFunction) -> Vec<(usize, Vec<f64>)> {
        let h = psi.spacing();
        let (lo, hi) = self.support_box(n, y);
        (0..self.d)
            .map(|a| {
                let first = psi.first_cell()[a];
                let len = psi.shape()[a] as i64;
                let c0 = ((lo[a] / h).floor() as i64 - first).clamp(0, len);
                let c1 = ((hi[a] / h).ceil() as i64 - first).clamp(0, len);
                let k = kind_for(zeta, a);
                let w = (c0..c1)
                    .map(|c| {
                        let mid = (first + c) as f64 * h + 0.5 * h;
                        self.base.eval_level(k, n[a], y[a], mid) * h
                    })
                    .collect();
                (c0 as usize, w)
            })
            .collect()
    }

    /// `⟨φ̂^{ζ,n}_y, ψ⟩` by the midpoint rule on the cells of `psi` (exact for Haar).
    pub fn inner_product(&self, zeta: IndexSet, n: &[u32], y: &[f64], psi: &TestFunction) -> Result<f64> {
        self.check_resolution(zeta, n, psi)?;
        let weights = self.axis_weights(zeta, n, y, psi);
        if weights.iter().any(|(_, w)| w.is_empty()) {
            return Ok(0.0);
        }
        let shape = psi.shape();
        let vals = psi.values();
        let lo: Vec<usize> = weights.iter().map(|(c, _)| *c).collect();
        let hi: Vec<usize> = weights.iter().map(|(c, w)| c + w.len()).collect();
        let mut acc = 0.0;
        crate::grid::Grid::for_each_box(&lo, &hi, |idx| {
            let mut flat = 0usize;
            let mut w = 1.0;
            for a in 0..self.d {
                flat = flat * shape[a] + idx[a];
                w *= weights[a].1[idx[a] - lo[a]];
            }
            acc += w * vals[flat];
        });
        Ok(acc)
    }

    /// Range of translation indices `k` (with `y = k 2^{-n}`) whose wavelets meet the cell box of `psi`.
    pub fn overlapping(&self, n: &[u32], psi: &TestFunction) -> (Vec<i64>, Vec<i64>) {
        let (c, r) = self.base.support();
        let h = psi.spacing();
        let mut lo = Vec::with_capacity(self.d);
        let mut hi = Vec::with_capacity(self.d);
        for a in 0..self.d {
            let s = (1u64 << n[a]) as f64;
            let x0 = psi.first_cell()[a] as f64 * h;
            let x1 = (psi.first_cell()[a] + psi.shape()[a] as i64) as f64 * h;
            // support [k/s + c/s, k/s + r/s] meets (x0, x1)
            lo.push((x0 * s - r).floor() as i64 + 1);
            hi.push((x1 * s - c).ceil() as i64 - 1);
        }
        (lo, hi)
    }

    /// Nonzero scaling coefficients `(k, ⟨φ^n_{k 2^{-n}}, ψ⟩)`.
    pub fn scaling_coefficients(&self, n: &[u32], psi: &TestFunction) -> Result<Vec<(Vec<i64>, f64)>> {
        let zeta = IndexSet::empty(self.d)?;
        self.check_resolution(zeta, n, psi)?;
        if self.is_haar() {
            let (blo, bshape, ints) = psi.block_integrals(n)?;
            let norm = (n.iter().map(|&k| (1u64 << k) as f64).product::<f64>()).sqrt();
            let mut out = Vec::new();
            for (flat, &v) in ints.iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                let mut k = vec![0i64; self.d];
                let mut r = flat;
                for a in (0..self.d).rev() {
                    k[a] = blo[a] + (r % bshape[a]) as i64;
                    r /= bshape[a];
                }
                out.push((k, v * norm));
            }
            return Ok(out);
        }
        let (lo, hi) = self.overlapping(n, psi);
        let mut out = Vec::new();
        let lo_u: Vec<usize> = vec![0; self.d];
        let hi_u: Vec<usize> = (0..self.d).map(|a| (hi[a] - lo[a] + 1).max(0) as usize).collect();
        let mut err = None;
        crate::grid::Grid::for_each_box(&lo_u, &hi_u, |off| {
            let k: Vec<i64> = (0..self.d).map(|a| lo[a] + off[a] as i64).collect();
            let y: Vec<f64> = (0..self.d).map(|a| k[a] as f64 / (1u64 << n[a]) as f64).collect();
            match self.inner_product(zeta, n, &y, psi) {
                Ok(v) if v != 0.0 => out.push((k, v)),
                Ok(_) => {}
                Err(e) => err = Some(e),
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(out),
        }
    }

    /// `P_n ψ = Σ_y φ^n_y ⟨φ^n_y, ψ⟩` sampled at the resolution of `psi`.
    pub fn project(&self, n: &[u32], psi: &TestFunction) -> Result<TestFunction> {
        let coeffs = self.scaling_coefficients(n, psi)?;
        let j = psi.level();
        let h = psi.spacing();
        let (c, r) = self.base.support();
        let mut lo = vec![i64::MAX; self.d];
        let mut hi = vec![i64::MIN; self.d];
        for (k, _) in &coeffs {
            for a in 0..self.d {
                let ratio = 1i64 << (j - n[a]);
                lo[a] = lo[a].min((k[a] + c as i64) * ratio);
                hi[a] = hi[a].max((k[a] + r as i64) * ratio);
            }
        }
        if coeffs.is_empty() {
            return TestFunction::from_cells(j, psi.first_cell().to_vec(), psi.shape().to_vec(), vec![0.0; psi.values().len()]);
        }
        let shape: Vec<usize> = (0..self.d).map(|a| (hi[a] - lo[a]) as usize).collect();
        let mut values = vec![0.0; shape.iter().product()];
        let zeta = IndexSet::empty(self.d)?;
        let strides: Vec<usize> = (0..self.d).map(|a| shape[a + 1..].iter().product()).collect();
        for (k, coef) in &coeffs {
            let y: Vec<f64> = (0..self.d).map(|a| k[a] as f64 / (1u64 << n[a]) as f64).collect();
            let blo: Vec<usize> =
                (0..self.d).map(|a| ((k[a] + c as i64) * (1i64 << (j - n[a])) - lo[a]) as usize).collect();
            let bhi: Vec<usize> =
                (0..self.d).map(|a| ((k[a] + r as i64) * (1i64 << (j - n[a])) - lo[a]) as usize).collect();
            crate::grid::Grid::for_each_box(&blo, &bhi, |idx| {
                let x: Vec<f64> = (0..self.d).map(|a| (lo[a] + idx[a] as i64) as f64 * h + 0.5 * h).collect();
                let flat: usize = (0..self.d).map(|a| idx[a] * strides[a]).sum();
                values[flat] += coef * self.eval(zeta, n, &y, &x);
            });
        }
        TestFunction::from_cells(j, lo, shape, values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn haar_normalization_and_moments() {
        let w = WaveletBasisD::haar(2);
        let n = [3, 2];
        let y = [0.25, 0.5];
        let phi = TestFunction::from_fn(6, &[0.25, 0.5], &[0.375, 0.75], 0, |_| 4.0 * 2f64.sqrt()).unwrap();
        let v = w.inner_product(IndexSet::empty(2).unwrap(), &n, &y, &phi).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        let one = TestFunction::indicator(6, &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        for zeta in IndexSet::full(2).unwrap().subsets().into_iter().skip(1) {
            assert!(w.inner_product(zeta, &n, &y, &one).unwrap().abs() < 1e-14);
        }
    }

    #[test]
    fn projection_is_idempotent_on_haar_space() {
        let w = WaveletBasisD::haar(2);
        let f = TestFunction::indicator(6, &[0.25, 0.5], &[0.375, 0.75]).unwrap();
        let p = w.project(&[3, 2], &f).unwrap();
        let diff = TestFunction::combine(1.0, &p, -1.0, &f).unwrap();
        assert!(diff.sup() < 1e-12);
    }

    #[test]
    fn resolution_error() {
        let w = WaveletBasisD::haar(1);
        let f = TestFunction::indicator(3, &[0.0], &[1.0]).unwrap();
        let zeta = IndexSet::full(1).unwrap();
        assert!(w.inner_product(zeta, &[3], &[0.0], &f).is_err());
    }

    #[test]
    fn dyadic_grid_points() {
        let g = DyadicGrid::new(vec![1, 2], 1.0);
        assert_eq!(g.len(), 15);
        let p = DyadicGrid::projected(vec![1, 2], 1.0, IndexSet::singleton(1, 2).unwrap());
        assert_eq!(p.len(), 5);
        assert!(p.contains(&[0.0, 0.75]) && !p.contains(&[0.5, 0.75]));
    }
}
