//! Compactly supported orthonormal wavelets: 1-D construction, tensor bases
//! in `d` dimensions and grid-sampled test functions.

pub mod filters;
mod tensor;
mod test_function;

pub use tensor::{DyadicGrid, WaveletBasisD};
pub use test_function::TestFunction;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Default sampling depth of the scaling and detail functions.
pub const DEFAULT_DEPTH: u32 = 12;
/// Stopping tolerance of the cascade on the integer nodes.
pub const CASCADE_TOL: f64 = 1e-10;
const CASCADE_MAX_ITER: usize = 500;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Haar,
    /// Daubechies wavelet with `N` vanishing moments, `N ∈ 2..=10`.
    Daubechies(usize),
}

impl Family {
    pub fn max_moments(self) -> usize {
        match self {
            Family::Haar => 1,
            Family::Daubechies(n) => n,
        }
    }
}

/// Which of the two 1-D generators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Kind {
    Scaling,
    Detail,
}

/// A 1-D scaling/detail pair sampled on a dyadic grid.
#[derive(Clone, Debug)]
pub struct WaveletBasis1D {
    pub family: Family,
    pub vanishing_moments: usize,
    pub depth: u32,
    /// Integer translation applied to the standard construction.
    pub shift: i64,
    pub scaling_filter: Vec<f64>,
    pub detail_filter: Vec<f64>,
    phi: Vec<f64>,
    psi: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BasisHeader {
    family: Family,
    r: usize,
    #[serde(rename = "J")]
    depth: u32,
    support: [f64; 2],
    shift: i64,
    scaling_filter: Vec<f64>,
    samples_per_function: usize,
}

impl WaveletBasis1D {
    pub fn haar() -> Self {
        build_basis(Family::Haar, 1, DEFAULT_DEPTH).expect("Haar basis is always valid")
    }

    /// Length `R − C` of the support.
    pub fn width(&self) -> usize {
        self.scaling_filter.len() - 1
    }

    /// Support `[C, R]` after the shift.
    pub fn support(&self) -> (f64, f64) {
        (self.shift as f64, (self.shift + self.width() as i64) as f64)
    }

    /// Refinement pairs `(k, a_k)` with `φ = Σ a_k φ¹_k`, `k ∈ Δ₁`.
    pub fn refinement_coeffs(&self) -> Vec<(f64, f64)> {
        self.scaling_filter
            .iter()
            .enumerate()
            .map(|(j, &h)| ((j as i64 + self.shift) as f64 / 2.0, h))
            .collect()
    }

    /// Pairs `(k, b_k)` with `φ̂ = Σ b_k φ¹_k`.
    pub fn detail_coeffs(&self) -> Vec<(f64, f64)> {
        self.detail_filter
            .iter()
            .enumerate()
            .map(|(j, &g)| ((j as i64 + self.shift) as f64 / 2.0, g))
            .collect()
    }

    pub fn is_haar(&self) -> bool {
        self.family == Family::Haar
    }

    pub fn samples(&self, kind: Kind) -> &[f64] {
        match kind {
            Kind::Scaling => &self.phi,
            Kind::Detail => &self.psi,
        }
    }

    /// Value at `x`; exact on the sample grid, linear interpolation between nodes.
    pub fn eval(&self, kind: Kind, x: f64) -> f64 {
        let u = x - self.shift as f64;
        if self.is_haar() {
            if !(0.0..1.0).contains(&u) {
                return 0.0;
            }
            return match kind {
                Kind::Scaling => 1.0,
                Kind::Detail => {
                    if u < 0.5 {
                        1.0
                    } else {
                        -1.0
                    }
                }
            };
        }
        let scale = (1u64 << self.depth) as f64;
        let pos = u * scale;
        let data = self.samples(kind);
        if pos < 0.0 || pos >= (data.len() - 1) as f64 {
            return 0.0;
        }
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        if frac == 0.0 {
            data[i]
        } else {
            data[i] * (1.0 - frac) + data[i + 1] * frac
        }
    }

    /// `2^{n/2} f(2^n(x − y))` for the generator `f` of the given kind.
    pub fn eval_level(&self, kind: Kind, n: u32, y: f64, x: f64) -> f64 {
        let s = (1u64 << n) as f64;
        s.sqrt() * self.eval(kind, s * (x - y))
    }

    /// Coefficients of `f^n_y` in the level-`m` scaling functions at
    /// `y + k 2^{-m}`, as `(first k, coefficients)`.
    fn expand(&self, kind: Kind, n: u32, m: u32) -> (i64, Vec<f64>) {
        let mut start = 0i64;
        let mut c = vec![1.0];
        for level in n..m {
            let taps = if level == n && kind == Kind::Detail { &self.detail_filter } else { &self.scaling_filter };
            let mut next = vec![0.0; 2 * c.len() + taps.len() - 2];
            for (i, &v) in c.iter().enumerate() {
                for (j, &t) in taps.iter().enumerate() {
                    next[2 * i + j] += v * t;
                }
            }
            start = 2 * start + self.shift;
            c = next;
        }
        (start, c)
    }

    /// `⟨f^{n_a}_{y_a}, g^{n_b}_{y_b}⟩`, computed exactly from the refinement
    /// masks: both sides are refined to a common level where the translates
    /// are orthonormal.
    pub fn pair(&self, a: (Kind, u32, f64), b: (Kind, u32, f64)) -> Result<f64> {
        let (ka, na, ya) = a;
        let (kb, nb, yb) = b;
        let mut m = na.max(nb);
        if ka == Kind::Detail && na == m || kb == Kind::Detail && nb == m {
            m += 1;
        }
        let mut gap = (ya - yb) * (1u64 << m) as f64;
        while gap.fract() != 0.0 {
            m += 1;
            gap *= 2.0;
            if m > 40 {
                return Err(Error::Resolution(format!("translates {ya} and {yb} are not dyadically commensurate")));
            }
        }
        if m - na.min(nb) > 20 {
            return Err(Error::Resolution(format!("level gap {} too large", m - na.min(nb))));
        }
        let (sa, ca) = self.expand(ka, na, m);
        let (sb, cb) = self.expand(kb, nb, m);
        // Position y_a + (sa+i) 2^{-m} equals y_b + (sb+j) 2^{-m} when j = sa + i + gap − sb.
        let off = sa + gap as i64 - sb;
        Ok(ca
            .iter()
            .enumerate()
            .filter_map(|(i, v)| {
                let j = i as i64 + off;
                (0..cb.len() as i64).contains(&j).then(|| v * cb[j as usize])
            })
            .sum())
    }

    /// `max_k |⟨φ, φ(·−k)⟩ − δ_{0,k}|` over all overlapping translates.
    pub fn orthonormality_residual(&self) -> Result<f64> {
        let w = self.width() as i64;
        let mut worst = 0.0f64;
        for k in -w..=w {
            let v = self.pair((Kind::Scaling, 0, 0.0), (Kind::Scaling, 0, k as f64))?;
            let t = if k == 0 { 1.0 } else { 0.0 };
            worst = worst.max((v - t).abs());
            let v = self.pair((Kind::Detail, 0, 0.0), (Kind::Detail, 0, k as f64))?;
            worst = worst.max((v - t).abs());
            let v = self.pair((Kind::Scaling, 0, 0.0), (Kind::Detail, 0, k as f64))?;
            worst = worst.max(v.abs());
        }
        Ok(worst)
    }

    /// `max_{m<r} |∫ x^m φ̂| / ∫ |x^m φ̂|` by node quadrature.
    pub fn moment_residual(&self) -> f64 {
        let step = 1.0 / (1u64 << self.depth) as f64;
        let c = self.shift as f64;
        (0..self.vanishing_moments)
            .map(|m| {
                let (signed, total) = self.psi.iter().enumerate().fold((0.0, 0.0), |(s, t), (k, v)| {
                    let w = v * (c + k as f64 * step).powi(m as i32);
                    (s + w, t + w.abs())
                });
                signed.abs() / total
            })
            .fold(0.0f64, f64::max)
    }

    /// `sup |φ − Σ a_k φ¹_k|` over the sample nodes.
    pub fn self_replication_residual(&self) -> f64 {
        let step = 1.0 / (1u64 << self.depth) as f64;
        let c = self.shift as f64;
        let coeffs = self.refinement_coeffs();
        (0..self.phi.len())
            .map(|k| {
                let x = c + k as f64 * step;
                let rhs: f64 = coeffs.iter().map(|&(off, a)| a * self.eval_level(Kind::Scaling, 1, off, x)).sum();
                (self.eval(Kind::Scaling, x) - rhs).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Translated copy with the support starting at `shift`.
    pub fn with_shift(&self, shift: i64) -> Self {
        let mut out = self.clone();
        out.shift = shift;
        out
    }

    pub fn dump(&self, stem: &Path) -> Result<()> {
        let (c, r) = self.support();
        let header = BasisHeader {
            family: self.family,
            r: self.vanishing_moments,
            depth: self.depth,
            support: [c, r],
            shift: self.shift,
            scaling_filter: self.scaling_filter.clone(),
            samples_per_function: self.phi.len(),
        };
        fs::write(stem.with_extension("json"), serde_json::to_string_pretty(&header)?)?;
        let mut bytes = Vec::with_capacity(16 * self.phi.len());
        for v in self.phi.iter().chain(&self.psi) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(stem.with_extension("bin"), bytes)?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let header: BasisHeader = serde_json::from_str(&fs::read_to_string(stem.with_extension("json"))?)?;
        let bytes = fs::read(stem.with_extension("bin"))?;
        let n = header.samples_per_function;
        if bytes.len() != 16 * n {
            return invalid(format!("basis binary holds {} bytes, expected {}", bytes.len(), 16 * n));
        }
        let vals: Vec<f64> =
            bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Ok(Self {
            family: header.family,
            vanishing_moments: header.r,
            depth: header.depth,
            shift: header.shift,
            detail_filter: filters::detail_filter(&header.scaling_filter),
            scaling_filter: header.scaling_filter,
            phi: vals[..n].to_vec(),
            psi: vals[n..].to_vec(),
        })
    }
}

/// Builds the basis of the given family with `r` vanishing moments, sampled
/// at depth `J` by the refinement cascade.
pub fn build_basis(family: Family, r: usize, depth: u32) -> Result<WaveletBasis1D> {
    if r == 0 || r > family.max_moments() {
        return invalid(format!("{family:?} provides at most {} vanishing moments, {r} requested", family.max_moments()));
    }
    if let Family::Daubechies(n) = family {
        if !(2..=10).contains(&n) {
            return invalid(format!("Daubechies order {n} outside 2..=10"));
        }
    }
    if !(1..=24).contains(&depth) {
        return invalid(format!("sampling depth {depth} outside 1..=24"));
    }
    let h = match family {
        Family::Haar => vec![std::f64::consts::FRAC_1_SQRT_2; 2],
        Family::Daubechies(n) => filters::daubechies_filter(n)?,
    };
    let g = filters::detail_filter(&h);
    let (phi, psi) = cascade(&h, &g, depth)?;
    Ok(WaveletBasis1D {
        family,
        vanishing_moments: r,
        depth,
        shift: 0,
        scaling_filter: h,
        detail_filter: g,
        phi,
        psi,
    })
}

/// Samples of φ and φ̂ at `k 2^{-depth}` on `[0, L−1]`.
///
/// The cascade started from the box indicator is run on the integer nodes
/// until it stabilizes; the refinement relation then fills each finer level.
fn cascade(h: &[f64], g: &[f64], depth: u32) -> Result<(Vec<f64>, Vec<f64>)> {
    let l = h.len();
    let w = l - 1;
    let s2 = std::f64::consts::SQRT_2;
    let tap = |i: i64| if (0..l as i64).contains(&i) { h[i as usize] } else { 0.0 };
    let mut ints = vec![0.0; w + 1];
    ints[0] = 1.0;
    let mut converged = false;
    for _ in 0..CASCADE_MAX_ITER {
        let next: Vec<f64> = (0..=w)
            .map(|i| (0..=w).map(|j| s2 * tap(2 * i as i64 - j as i64) * ints[j]).sum())
            .collect();
        let diff = next.iter().zip(&ints).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        ints = next;
        if diff < CASCADE_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Diverged("cascade on integer nodes did not stabilize".into()));
    }
    let mut phi = ints;
    for j in 1..=depth {
        // φ(k/2^j) = √2 Σ_m h_m φ(k/2^{j−1} − m); the argument has index k − m·2^{j−1} one level up.
        let half = 1i64 << (j - 1);
        let mut next = vec![0.0; w * (1 << j) + 1];
        for (k, v) in next.iter_mut().enumerate() {
            if k % 2 == 0 {
                *v = phi[k / 2];
                continue;
            }
            let mut acc = 0.0;
            for (m, &hm) in h.iter().enumerate() {
                let idx = k as i64 - m as i64 * half;
                if idx >= 0 && (idx as usize) < phi.len() {
                    acc += hm * phi[idx as usize];
                }
            }
            *v = s2 * acc;
        }
        phi = next;
    }
    // φ̂(k/2^J) = √2 Σ_m g_m φ(2k/2^J − m): index 2k − m 2^J on the level-J grid.
    let mut psi = vec![0.0; phi.len()];
    for (k, v) in psi.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (m, &gm) in g.iter().enumerate() {
            let idx = 2 * k as i64 - (m as i64) * (1i64 << depth);
            if idx >= 0 && (idx as usize) < phi.len() {
                acc += gm * phi[idx as usize];
            }
        }
        *v = s2 * acc;
    }
    Ok((phi, psi))
}
