//! Index subsets of `{0,…,d-1}`, coordinate projections and rectangular increments.
//!
//! Axes are 0-based in the API; `Display` prints the 1-based members.

use std::fmt;

use crate::error::{invalid, Result};

/// Largest supported dimension. Increments cost `2^#θ` evaluations.
pub const MAX_DIM: usize = 8;

/// Absolute tolerance used by the identity checks.
pub const IDENTITY_TOL: f64 = 1e-12;

/// A subset of the axes `{0,…,d-1}` stored as a bitmask.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub struct IndexSet {
    mask: u16,
    dim: u8,
}

impl IndexSet {
    pub fn empty(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self { mask: 0, dim: dim as u8 })
    }

    pub fn full(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self { mask: (1u16 << dim) - 1, dim: dim as u8 })
    }

    pub fn from_axes(axes: &[usize], dim: usize) -> Result<Self> {
        check_dim(dim)?;
        let mut mask = 0u16;
        for &a in axes {
            if a >= dim {
                return invalid(format!("axis {a} out of range for dimension {dim}"));
            }
            if mask & (1 << a) != 0 {
                return invalid(format!("duplicate axis {a}"));
            }
            mask |= 1 << a;
        }
        Ok(Self { mask, dim: dim as u8 })
    }

    pub fn singleton(axis: usize, dim: usize) -> Result<Self> {
        Self::from_axes(&[axis], dim)
    }

    pub fn from_mask(mask: u16, dim: usize) -> Result<Self> {
        check_dim(dim)?;
        if mask >> dim != 0 {
            return invalid(format!("mask {mask:#b} exceeds dimension {dim}"));
        }
        Ok(Self { mask, dim: dim as u8 })
    }

    pub fn mask(self) -> u16 {
        self.mask
    }

    pub fn dim(self) -> usize {
        self.dim as usize
    }

    pub fn len(self) -> usize {
        self.mask.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.mask == 0
    }

    pub fn is_full(self) -> bool {
        self.mask == (1u16 << self.dim) - 1
    }

    pub fn contains(self, axis: usize) -> bool {
        axis < self.dim() && self.mask & (1 << axis) != 0
    }

    pub fn axes(self) -> impl Iterator<Item = usize> {
        let mask = self.mask;
        (0..self.dim()).filter(move |&i| mask & (1 << i) != 0)
    }

    pub fn complement(self) -> Self {
        Self { mask: !self.mask & ((1u16 << self.dim) - 1), dim: self.dim }
    }

    pub fn union(self, other: Self) -> Self {
        debug_assert_eq!(self.dim, other.dim);
        Self { mask: self.mask | other.mask, dim: self.dim }
    }

    pub fn intersection(self, other: Self) -> Self {
        debug_assert_eq!(self.dim, other.dim);
        Self { mask: self.mask & other.mask, dim: self.dim }
    }

    pub fn difference(self, other: Self) -> Self {
        debug_assert_eq!(self.dim, other.dim);
        Self { mask: self.mask & !other.mask, dim: self.dim }
    }

    pub fn is_disjoint(self, other: Self) -> bool {
        self.mask & other.mask == 0
    }

    pub fn is_subset_of(self, other: Self) -> bool {
        self.mask & !other.mask == 0
    }

    /// All subsets in increasing bitmask order.
    pub fn subsets(self) -> Vec<IndexSet> {
        (0..=self.mask)
            .filter(|m| m & !self.mask == 0)
            .map(|mask| Self { mask, dim: self.dim })
            .collect()
    }

    /// Every subset of `{0,…,dim-1}` in increasing bitmask order.
    pub fn all(dim: usize) -> Result<Vec<IndexSet>> {
        Ok(Self::full(dim)?.subsets())
    }
}

impl fmt::Debug for IndexSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for IndexSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, a) in self.axes().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", a + 1)?;
        }
        write!(f, "}}")
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 || dim > MAX_DIM {
        return invalid(format!("dimension {dim} outside 1..={MAX_DIM}"));
    }
    Ok(())
}

fn check_point(theta: IndexSet, x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != theta.dim() || y.len() != theta.dim() {
        return invalid(format!(
            "dimension mismatch: index set in d={}, points of length {} and {}",
            theta.dim(),
            x.len(),
            y.len()
        ));
    }
    Ok(())
}

/// Copy of `y` whose coordinates in `theta` are taken from `x`.
pub fn project(theta: IndexSet, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    check_point(theta, x, y)?;
    Ok(project_unchecked(theta, x, y))
}

pub(crate) fn project_unchecked<T: Copy>(theta: IndexSet, x: &[T], y: &[T]) -> Vec<T> {
    let mut out = y.to_vec();
    for i in theta.axes() {
        out[i] = x[i];
    }
    out
}

/// Signed corners of the rectangular increment: `(sign, π^{θ'}_y x)` for `θ' ⊆ θ`.
pub fn corners<T: Copy>(theta: IndexSet, x: &[T], y: &[T]) -> Vec<(f64, Vec<T>)> {
    let total = theta.len();
    theta
        .subsets()
        .into_iter()
        .map(|sub| {
            let sign = if (total - sub.len()) % 2 == 0 { 1.0 } else { -1.0 };
            (sign, project_unchecked(sub, y, x))
        })
        .collect()
}

/// `□^θ_{x,y} f = Σ_{θ'⊆θ} (−1)^{#(θ∖θ')} f(π^{θ'}_y x)`.
pub fn rect_increment<F>(theta: IndexSet, x: &[f64], y: &[f64], mut f: F) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    check_point(theta, x, y)?;
    Ok(corners(theta, x, y).into_iter().map(|(s, p)| s * f(&p)).sum())
}

/// Rectangular increment of a function with vector output (one entry per sample).
pub fn rect_increment_samples<T, F>(theta: IndexSet, x: &[T], y: &[T], mut f: F, out: &mut [f64])
where
    T: Copy,
    F: FnMut(&[T]) -> Vec<f64>,
{
    out.iter_mut().for_each(|v| *v = 0.0);
    for (s, p) in corners(theta, x, y) {
        for (o, v) in out.iter_mut().zip(f(&p)) {
            *o += s * v;
        }
    }
}

/// Checks `□^{θ1}_{x,y}(□^{θ2}_{·,y} f) = □^{θ1∪θ2}_{x,y} f`.
pub fn check_composition_identity<F>(
    theta1: IndexSet,
    theta2: IndexSet,
    x: &[f64],
    y: &[f64],
    f: F,
) -> Result<bool>
where
    F: Fn(&[f64]) -> f64,
{
    if !theta1.is_disjoint(theta2) {
        return invalid(format!("sets {theta1} and {theta2} are not disjoint"));
    }
    check_point(theta1, x, y)?;
    let inner = |z: &[f64]| rect_increment(theta2, z, y, &f).expect("checked dimensions");
    let lhs = rect_increment(theta1, x, y, inner)?;
    let rhs = rect_increment(theta1.union(theta2), x, y, &f)?;
    Ok(close(lhs, rhs))
}

/// Checks `□^θ(fg) = Σ_{θ1∪θ2=θ} □^{θ1}f · □^{θ2}g` over all covers of `θ`.
pub fn check_product_identity<F, G>(theta: IndexSet, x: &[f64], y: &[f64], f: F, g: G) -> Result<bool>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> f64,
{
    check_point(theta, x, y)?;
    let lhs = rect_increment(theta, x, y, |z| f(z) * g(z))?;
    let mut rhs = 0.0;
    for t1 in theta.subsets() {
        for t2 in theta.subsets() {
            if t1.union(t2) == theta {
                rhs += rect_increment(t1, x, y, &f)? * rect_increment(t2, x, y, &g)?;
            }
        }
    }
    Ok(close(lhs, rhs))
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= IDENTITY_TOL * (1.0 + a.abs().max(b.abs()))
}

/// One term `sign · □^{set}_{base, y} f` of a shift expansion.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftTerm {
    pub sign: f64,
    pub base: Vec<f64>,
    pub set: IndexSet,
}

impl ShiftTerm {
    pub fn evaluate<F: FnMut(&[f64]) -> f64>(&self, y: &[f64], f: F) -> Result<f64> {
        Ok(self.sign * rect_increment(self.set, &self.base, y, f)?)
    }
}

/// Terms of `□^θ_{x,y} f = Σ_{η=η1⊔η2} (−1)^{#η2} □^{θ∪η2}_{π^{η1}_y x, y} f`,
/// ordered by increasing bitmask of `η2`.
pub fn shift_expand(theta: IndexSet, eta: IndexSet, x: &[f64], y: &[f64]) -> Result<Vec<ShiftTerm>> {
    if !theta.is_disjoint(eta) {
        return invalid(format!("sets {theta} and {eta} overlap"));
    }
    check_point(theta, x, y)?;
    Ok(eta
        .subsets()
        .into_iter()
        .map(|eta2| {
            let eta1 = eta.difference(eta2);
            ShiftTerm {
                sign: if eta2.len() % 2 == 0 { 1.0 } else { -1.0 },
                base: project_unchecked(eta1, y, x),
                set: theta.union(eta2),
            }
        })
        .collect())
}

/// Sum of the evaluated shift terms, in expansion order.
pub fn sum_shift_terms<F: Fn(&[f64]) -> f64>(terms: &[ShiftTerm], y: &[f64], f: F) -> Result<f64> {
    let mut acc = 0.0;
    for t in terms {
        acc += t.evaluate(y, &f)?;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(axes: &[usize], d: usize) -> IndexSet {
        IndexSet::from_axes(axes, d).unwrap()
    }

    #[test]
    fn projection_examples() {
        let x = [0.3, 0.7];
        let y = [0.1, 0.9];
        assert_eq!(project(set(&[0], 2), &x, &y).unwrap(), vec![0.3, 0.9]);
        assert_eq!(project(set(&[], 2), &x, &y).unwrap(), vec![0.1, 0.9]);
        assert_eq!(project(set(&[0, 1], 2), &x, &y).unwrap(), vec![0.3, 0.7]);
        assert!(project(set(&[0], 2), &[0.1], &y).is_err());
    }

    #[test]
    fn increment_examples() {
        let full = IndexSet::full(2).unwrap();
        let v = rect_increment(full, &[0.0, 0.0], &[1.0, 1.0], |p| p[0] * p[1]).unwrap();
        assert_eq!(v, 1.0);
        let v = rect_increment(full, &[0.2, 0.4], &[0.9, 0.5], |p| p[0].sin() + p[1].exp()).unwrap();
        assert!(v.abs() < 1e-15);
        let v = rect_increment(set(&[0], 2), &[1.0, 2.0], &[3.0, 5.0], |p| p[0] * p[0] * p[1]).unwrap();
        assert_eq!(v, 16.0);
        let v = rect_increment(set(&[], 2), &[1.0, 2.0], &[3.0, 5.0], |p| p[0] + p[1]).unwrap();
        assert_eq!(v, 3.0);
    }

    #[test]
    fn subsets_are_lexicographic() {
        let s = set(&[0, 2], 3).subsets();
        let masks: Vec<u16> = s.iter().map(|t| t.mask()).collect();
        assert_eq!(masks, vec![0, 1, 4, 5]);
    }

    #[test]
    fn dimension_guard() {
        assert!(IndexSet::full(9).is_err());
        assert!(IndexSet::full(0).is_err());
        assert!(IndexSet::from_axes(&[1, 1], 3).is_err());
    }

    #[test]
    fn shift_examples() {
        let f = |p: &[f64]| p[0] * p[0] * p[1] + 3.0 * p[1];
        let x = [0.2, 0.3];
        let y = [0.7, 0.9];
        let terms = shift_expand(set(&[], 2), set(&[0], 2), &x, &y).unwrap();
        assert_eq!(terms.len(), 2);
        assert_eq!(terms[0].base, vec![0.7, 0.3]);
        assert_eq!((terms[0].sign, terms[1].sign), (1.0, -1.0));
        assert_eq!(terms[1].set, set(&[0], 2));
        let lhs = f(&x);
        assert!((sum_shift_terms(&terms, &y, f).unwrap() - lhs).abs() < 1e-14);

        let terms = shift_expand(set(&[0], 2), set(&[1], 2), &x, &y).unwrap();
        assert_eq!((terms[0].sign, terms[1].sign), (1.0, -1.0));
        assert_eq!(terms[0].base, vec![0.2, 0.9]);
        assert_eq!(terms[1].set, IndexSet::full(2).unwrap());

        let terms = shift_expand(set(&[0], 2), set(&[], 2), &x, &y).unwrap();
        assert_eq!(terms, vec![ShiftTerm { sign: 1.0, base: x.to_vec(), set: set(&[0], 2) }]);
        assert!(shift_expand(set(&[0], 2), set(&[0], 2), &x, &y).is_err());
    }

    #[test]
    fn display_is_one_based() {
        assert_eq!(set(&[0, 2], 3).to_string(), "{1,3}");
    }
}
