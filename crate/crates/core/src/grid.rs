//! Uniform periodic grid on the unit torus `[0,1)^d`, fields sampled on it,
//! central-difference operators and rectangle-rule quadrature.
//!
//! Values are stored in row-major order: axis 0 varies slowest. All index
//! arithmetic wraps modulo `n` on every axis.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::{deterministic_max, deterministic_sum, Real};

/// Minimum number of points per axis.
pub const MIN_POINTS: usize = 8;
pub const MAX_DIM: usize = 3;

const PAR_MIN_LEN: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TorusGrid {
    dim: usize,
    n: usize,
}

impl TorusGrid {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::Grid(format!("dimension must be 1, 2 or 3, got {dim}")));
        }
        if n < MIN_POINTS {
            return Err(Error::Grid(format!("need at least {MIN_POINTS} points per axis, got {n}")));
        }
        Ok(Self { dim, n })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Total number of grid points, `n^dim`.
    #[inline]
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Grid spacing `1/n`.
    #[inline]
    pub fn h<T: Real>(&self) -> T {
        T::one() / T::from_count(self.n)
    }

    /// Quadrature weight `h^dim` of a single cell.
    #[inline]
    pub fn cell_volume<T: Real>(&self) -> T {
        self.h::<T>().powi(self.dim as i32)
    }

    #[inline]
    pub fn stride(&self, axis: usize) -> usize {
        self.n.pow((self.dim - 1 - axis) as u32)
    }

    /// Per-axis integer coordinates of a linear index (unused axes are 0).
    #[inline]
    pub fn multi_index(&self, idx: usize) -> [usize; MAX_DIM] {
        let mut out = [0; MAX_DIM];
        let mut rest = idx;
        for axis in (0..self.dim).rev() {
            out[axis] = rest % self.n;
            rest /= self.n;
        }
        out
    }

    /// Linear index of integer coordinates; each coordinate is wrapped.
    #[inline]
    pub fn index_of(&self, coords: &[usize]) -> usize {
        coords.iter().take(self.dim).fold(0, |acc, &c| acc * self.n + c % self.n)
    }

    /// Physical coordinates `i/n` of a grid point (unused axes are 0).
    #[inline]
    pub fn point<T: Real>(&self, idx: usize) -> [T; MAX_DIM] {
        let m = self.multi_index(idx);
        let n = T::from_count(self.n);
        let mut x = [T::zero(); MAX_DIM];
        for a in 0..self.dim {
            x[a] = T::from_count(m[a]) / n;
        }
        x
    }

    /// Neighbouring index one step along `axis` (forward or backward), wrapped.
    #[inline]
    pub fn neighbor(&self, idx: usize, axis: usize, forward: bool) -> usize {
        let stride = self.stride(axis);
        let c = (idx / stride) % self.n;
        if forward {
            if c + 1 == self.n {
                idx + stride - self.n * stride
            } else {
                idx + stride
            }
        } else if c == 0 {
            idx + (self.n - 1) * stride
        } else {
            idx - stride
        }
    }

    pub(crate) fn check_same(&self, other: &TorusGrid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch { expected: self.describe(), found: other.describe() })
        }
    }

    pub fn describe(&self) -> String {
        format!("{}^{}", self.n, self.dim)
    }
}

/// Minimum-image displacement `x - c` on the unit torus, each component in `[-1/2, 1/2)`.
#[inline]
pub fn torus_displacement<T: Real>(x: &[T], c: &[T], dim: usize) -> [T; MAX_DIM] {
    let half = T::lit(0.5);
    let mut d = [T::zero(); MAX_DIM];
    for a in 0..dim {
        let mut v = x[a] - c[a];
        v = v - (v + half).floor();
        d[a] = v;
    }
    d
}

/// Grid-sampled real function.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField<T> {
    grid: TorusGrid,
    values: Vec<T>,
}

impl<T: Real> ScalarField<T> {
    /// Wraps raw values; rejects wrong lengths and non-finite entries.
    pub fn new(grid: TorusGrid, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Grid(format!(
                "expected {} values for a {} grid, got {}",
                grid.len(),
                grid.describe(),
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { grid, values })
    }

    /// Internal constructor for values produced by finite arithmetic on finite input.
    pub(crate) fn from_vec_unchecked(grid: TorusGrid, values: Vec<T>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn constant(grid: TorusGrid, c: T) -> Self {
        Self { grid, values: vec![c; grid.len()] }
    }

    pub fn zeros(grid: TorusGrid) -> Self {
        Self::constant(grid, T::zero())
    }

    /// Samples `f` at every grid point.
    pub fn from_fn<F>(grid: TorusGrid, f: F) -> Result<Self>
    where
        F: Fn(&[T]) -> T + Sync,
    {
        let values: Vec<T> = (0..grid.len())
            .into_par_iter()
            .with_min_len(PAR_MIN_LEN)
            .map(|i| f(&grid.point::<T>(i)[..grid.dim()]))
            .collect();
        Self::new(grid, values)
    }

    pub(crate) fn from_index_fn<F>(grid: TorusGrid, f: F) -> Self
    where
        F: Fn(usize) -> T + Sync,
    {
        let values: Vec<T> = (0..grid.len()).into_par_iter().with_min_len(PAR_MIN_LEN).map(&f).collect();
        Self::from_vec_unchecked(grid, values)
    }

    #[inline]
    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    #[inline]
    pub fn get(&self, idx: usize) -> T {
        self.values[idx]
    }

    pub fn max(&self) -> T {
        let v = &self.values;
        deterministic_max(v.len(), |i| v[i])
    }

    pub fn min(&self) -> T {
        let v = &self.values;
        -deterministic_max(v.len(), |i| -v[i])
    }

    pub fn max_abs(&self) -> T {
        let v = &self.values;
        deterministic_max(v.len(), |i| v[i].abs())
    }

    /// Pointwise map; fails if the result is not finite.
    pub fn map<F>(&self, f: F) -> Result<Self>
    where
        F: Fn(T) -> T + Sync,
    {
        let v = &self.values;
        Self::new(self.grid, (0..v.len()).into_par_iter().with_min_len(PAR_MIN_LEN).map(|i| f(v[i])).collect())
    }

    /// Pointwise combination with another field on the same grid.
    pub fn zip_map<F>(&self, other: &Self, f: F) -> Result<Self>
    where
        F: Fn(T, T) -> T + Sync,
    {
        self.grid.check_same(&other.grid)?;
        let (a, b) = (&self.values, &other.values);
        Self::new(self.grid, (0..a.len()).into_par_iter().with_min_len(PAR_MIN_LEN).map(|i| f(a[i], b[i])).collect())
    }

    /// Largest pointwise `|self - other|`.
    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.grid.check_same(&other.grid)?;
        let (a, b) = (&self.values, &other.values);
        Ok(deterministic_max(a.len(), |i| (a[i] - b[i]).abs()))
    }
}

/// `dim` component fields on a common grid.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField<T> {
    grid: TorusGrid,
    components: Vec<ScalarField<T>>,
}

impl<T: Real> VectorField<T> {
    pub fn new(components: Vec<ScalarField<T>>) -> Result<Self> {
        let grid =
            *components.first().ok_or_else(|| Error::Grid("vector field needs at least one component".into()))?.grid();
        if components.len() != grid.dim() {
            return Err(Error::Grid(format!(
                "vector field on a {}-d grid needs {} components, got {}",
                grid.dim(),
                grid.dim(),
                components.len()
            )));
        }
        for c in &components {
            grid.check_same(c.grid())?;
        }
        Ok(Self { grid, components })
    }

    pub fn zeros(grid: TorusGrid) -> Self {
        Self { grid, components: (0..grid.dim()).map(|_| ScalarField::zeros(grid)).collect() }
    }

    /// Samples a vector-valued function; `f` writes the first `dim` entries.
    pub fn from_fn<F>(grid: TorusGrid, f: F) -> Result<Self>
    where
        F: Fn(&[T]) -> [T; MAX_DIM] + Sync,
    {
        let samples: Vec<[T; MAX_DIM]> = (0..grid.len())
            .into_par_iter()
            .with_min_len(PAR_MIN_LEN)
            .map(|i| f(&grid.point::<T>(i)[..grid.dim()]))
            .collect();
        let components = (0..grid.dim())
            .map(|a| ScalarField::new(grid, samples.iter().map(|s| s[a]).collect()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { grid, components })
    }

    pub(crate) fn from_index_fn<F>(grid: TorusGrid, f: F) -> Self
    where
        F: Fn(usize) -> [T; MAX_DIM] + Sync,
    {
        let samples: Vec<[T; MAX_DIM]> = (0..grid.len()).into_par_iter().with_min_len(PAR_MIN_LEN).map(&f).collect();
        let components = (0..grid.dim())
            .map(|a| ScalarField::from_vec_unchecked(grid, samples.iter().map(|s| s[a]).collect()))
            .collect();
        Self { grid, components }
    }

    #[inline]
    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    #[inline]
    pub fn component(&self, axis: usize) -> &ScalarField<T> {
        &self.components[axis]
    }

    pub fn components(&self) -> &[ScalarField<T>] {
        &self.components
    }

    /// Vector at one grid point (unused axes are 0).
    #[inline]
    pub fn at(&self, idx: usize) -> [T; MAX_DIM] {
        let mut v = [T::zero(); MAX_DIM];
        for (a, c) in self.components.iter().enumerate() {
            v[a] = c.values[idx];
        }
        v
    }

    /// Pointwise Euclidean norm.
    pub fn norm(&self) -> ScalarField<T> {
        let d = self.grid.dim();
        ScalarField::from_index_fn(self.grid, |i| {
            let v = self.at(i);
            v[..d].iter().fold(T::zero(), |s, &x| s + x * x).sqrt()
        })
    }

    pub fn max_norm(&self) -> T {
        let d = self.grid.dim();
        deterministic_max(self.grid.len(), |i| {
            let v = self.at(i);
            v[..d].iter().fold(T::zero(), |s, &x| s + x * x).sqrt()
        })
    }
}

/// Symmetric `dim x dim` matrix at every grid point, upper triangle stored.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrixField<T> {
    grid: TorusGrid,
    entries: Vec<ScalarField<T>>,
}

impl<T: Real> SymMatrixField<T> {
    #[inline]
    fn slot(dim: usize, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        // Row-major packing of the upper triangle.
        i * dim - i * (i + 1) / 2 + j
    }

    #[inline]
    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    /// Entry `(i, j)` as a field; `(i, j)` and `(j, i)` are the same storage.
    pub fn entry(&self, i: usize, j: usize) -> &ScalarField<T> {
        &self.entries[Self::slot(self.grid.dim(), i, j)]
    }

    pub fn at(&self, idx: usize) -> [[T; MAX_DIM]; MAX_DIM] {
        let d = self.grid.dim();
        let mut m = [[T::zero(); MAX_DIM]; MAX_DIM];
        for i in 0..d {
            for j in 0..d {
                m[i][j] = self.entries[Self::slot(d, i, j)].values[idx];
            }
        }
        m
    }

    /// Largest pointwise Frobenius norm.
    pub fn max_frobenius(&self) -> T {
        let d = self.grid.dim();
        deterministic_max(self.grid.len(), |idx| {
            let m = self.at(idx);
            let mut s = T::zero();
            for row in m.iter().take(d) {
                for &x in row.iter().take(d) {
                    s = s + x * x;
                }
            }
            s.sqrt()
        })
    }
}

/// First and second central differences of a field at one grid point.
#[derive(Clone, Copy, Debug)]
pub struct Jet<T> {
    pub grad: [T; MAX_DIM],
    pub hess: [[T; MAX_DIM]; MAX_DIM],
}

/// Central-difference gradient at one point: `(f[i+1] - f[i-1]) / 2h` per axis.
#[inline]
pub fn gradient_at<T: Real>(grid: &TorusGrid, f: &[T], idx: usize) -> [T; MAX_DIM] {
    let inv_2h = T::from_count(grid.n()) * T::lit(0.5);
    let mut g = [T::zero(); MAX_DIM];
    for (a, ga) in g.iter_mut().enumerate().take(grid.dim()) {
        let p = grid.neighbor(idx, a, true);
        let m = grid.neighbor(idx, a, false);
        *ga = (f[p] - f[m]) * inv_2h;
    }
    g
}

/// Gradient and Hessian at one point.
///
/// Diagonal entries use the compact three-point stencil; off-diagonal
/// entries nest two central differences, so the result is symmetric.
#[inline]
pub fn jet_at<T: Real>(grid: &TorusGrid, f: &[T], idx: usize) -> Jet<T> {
    let d = grid.dim();
    let n = T::from_count(grid.n());
    let inv_h2 = n * n;
    let inv_4h2 = inv_h2 * T::lit(0.25);
    let grad = gradient_at(grid, f, idx);
    let mut hess = [[T::zero(); MAX_DIM]; MAX_DIM];
    let c = f[idx];
    for a in 0..d {
        let p = grid.neighbor(idx, a, true);
        let m = grid.neighbor(idx, a, false);
        hess[a][a] = (f[p] - (c + c) + f[m]) * inv_h2;
        for b in (a + 1)..d {
            let pp = f[grid.neighbor(p, b, true)];
            let pm = f[grid.neighbor(p, b, false)];
            let mp = f[grid.neighbor(m, b, true)];
            let mm = f[grid.neighbor(m, b, false)];
            let v = ((pp - pm) - (mp - mm)) * inv_4h2;
            hess[a][b] = v;
            hess[b][a] = v;
        }
    }
    Jet { grad, hess }
}

pub fn gradient<T: Real>(f: &ScalarField<T>) -> VectorField<T> {
    let grid = *f.grid();
    let v = f.values();
    VectorField::from_index_fn(grid, |i| gradient_at(&grid, v, i))
}

pub fn hessian<T: Real>(f: &ScalarField<T>) -> SymMatrixField<T> {
    let grid = *f.grid();
    let d = grid.dim();
    let v = f.values();
    let jets: Vec<[[T; MAX_DIM]; MAX_DIM]> =
        (0..grid.len()).into_par_iter().with_min_len(PAR_MIN_LEN).map(|i| jet_at(&grid, v, i).hess).collect();
    let mut entries = Vec::with_capacity(d * (d + 1) / 2);
    for i in 0..d {
        for j in i..d {
            entries.push(ScalarField::from_vec_unchecked(grid, jets.iter().map(|m| m[i][j]).collect()));
        }
    }
    SymMatrixField { grid, entries }
}

/// `sqrt(eps^2 + |p|^2)`.
#[inline]
pub fn regularized_norm<T: Real>(p: &[T], eps: T) -> T {
    p.iter().fold(eps * eps, |s, &x| s + x * x).sqrt()
}

/// Rectangle rule `sum f[i] h^d` with the fixed-order compensated reduction.
pub fn integrate<T: Real>(f: &ScalarField<T>) -> T {
    let v = f.values();
    integrate_with(f.grid(), |i| v[i])
}

/// Rectangle rule applied to a pointwise integrand given by index.
pub fn integrate_with<T, F>(grid: &TorusGrid, integrand: F) -> T
where
    T: Real,
    F: Fn(usize) -> T + Sync,
{
    deterministic_sum(grid.len(), integrand) * grid.cell_volume::<T>()
}
