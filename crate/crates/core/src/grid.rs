//! Uniform cell-centered box grids with a no-flux discrete calculus.
//!
//! Cells are stored row-major with axis 0 slowest. Faces are stored per axis;
//! only interior faces carry a value, boundary faces are identically zero so
//! every divergence telescopes to zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    dim: usize,
    cells: [usize; MAX_DIM],
    lengths: [f64; MAX_DIM],
}

impl GridSpec {
    pub fn new(cells: &[usize], lengths: &[f64]) -> Result<Self> {
        let dim = cells.len();
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension must be 1, 2 or 3, got {dim}")));
        }
        if lengths.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "{} cell counts but {} lengths",
                dim,
                lengths.len()
            )));
        }
        let mut c = [1usize; MAX_DIM];
        let mut l = [1.0f64; MAX_DIM];
        for axis in 0..dim {
            if cells[axis] < 2 {
                return Err(Error::InvalidGrid(format!(
                    "axis {axis} needs at least 2 cells, got {}",
                    cells[axis]
                )));
            }
            if !(lengths[axis].is_finite() && lengths[axis] > 0.0) {
                return Err(Error::InvalidGrid(format!(
                    "axis {axis} length must be positive, got {}",
                    lengths[axis]
                )));
            }
            c[axis] = cells[axis];
            l[axis] = lengths[axis];
        }
        Ok(Self {
            dim,
            cells: c,
            lengths: l,
        })
    }

    /// `n` cells of the same size along every one of `dim` axes of length `length`.
    pub fn uniform(dim: usize, n: usize, length: f64) -> Result<Self> {
        Self::new(&vec![n; dim], &vec![length; dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells[..self.dim]
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths[..self.dim]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.lengths[axis] / self.cells[axis] as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|a| self.spacing(a)).product()
    }

    pub fn domain_volume(&self) -> f64 {
        self.lengths().iter().product()
    }

    pub fn num_cells(&self) -> usize {
        self.cells().iter().product()
    }

    pub fn num_faces(&self, axis: usize) -> usize {
        let (outer, mid, inner) = self.axis_layout(axis);
        outer * (mid - 1) * inner
    }

    pub fn total_faces(&self) -> usize {
        (0..self.dim).map(|a| self.num_faces(a)).sum()
    }

    /// Splits the row-major index space around `axis` into (outer, axis, inner) extents.
    fn axis_layout(&self, axis: usize) -> (usize, usize, usize) {
        let outer: usize = self.cells[..axis].iter().product();
        let inner: usize = self.cells[axis + 1..self.dim].iter().product();
        (outer, self.cells[axis], inner)
    }

    /// Distance in the flat index between neighbours along `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        self.cells[axis + 1..self.dim].iter().product()
    }

    /// Calls `f(face, left_cell, right_cell)` for every interior face normal to `axis`.
    #[inline]
    pub fn for_each_face(&self, axis: usize, mut f: impl FnMut(usize, usize, usize)) {
        let (outer, mid, inner) = self.axis_layout(axis);
        let mut face = 0;
        for o in 0..outer {
            for m in 0..mid - 1 {
                let left0 = (o * mid + m) * inner;
                for i in 0..inner {
                    let left = left0 + i;
                    f(face, left, left + inner);
                    face += 1;
                }
            }
        }
    }

    pub fn cell_coords(&self, index: usize) -> [usize; MAX_DIM] {
        let mut coords = [0usize; MAX_DIM];
        let mut rest = index;
        for axis in (0..self.dim).rev() {
            coords[axis] = rest % self.cells[axis];
            rest /= self.cells[axis];
        }
        coords
    }

    pub fn cell_center(&self, index: usize) -> [f64; MAX_DIM] {
        let coords = self.cell_coords(index);
        let mut x = [0.0; MAX_DIM];
        for axis in 0..self.dim {
            x[axis] = (coords[axis] as f64 + 0.5) * self.spacing(axis);
        }
        x
    }

    pub fn is_boundary_cell(&self, index: usize) -> bool {
        let coords = self.cell_coords(index);
        (0..self.dim).any(|a| coords[a] == 0 || coords[a] + 1 == self.cells[a])
    }

    pub fn ensure_same(&self, other: &GridSpec) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                expected: self.cells().to_vec(),
                found: other.cells().to_vec(),
            })
        }
    }
}

/// One scalar per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: GridSpec,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.num_cells() {
            return Err(Error::InvalidArgument(format!(
                "field has {} values, grid has {} cells",
                values.len(),
                grid.num_cells()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteField);
        }
        Ok(Self { grid, values })
    }

    /// Builds a field without the finiteness scan; used on hot paths where the
    /// caller checks the values itself.
    pub(crate) fn from_raw(grid: GridSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.num_cells());
        Self { grid, values }
    }

    pub fn constant(grid: GridSpec, c: f64) -> Result<Self> {
        Self::new(grid, vec![c; grid.num_cells()])
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self::from_raw(grid, vec![0.0; grid.num_cells()])
    }

    /// Samples `f` at cell centers.
    pub fn from_fn(grid: GridSpec, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = (0..grid.num_cells())
            .map(|i| f(&grid.cell_center(i)[..grid.dim()]))
            .collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::from_raw(self.grid, self.values.iter().map(|&x| f(x)).collect())
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
        debug_assert_eq!(self.grid, other.grid);
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Field::from_raw(self.grid, values)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn check_finite(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFiniteField)
        }
    }
}

/// One value per interior face, grouped by the axis the face is normal to.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceData {
    grid: GridSpec,
    axes: Vec<Vec<f64>>,
}

impl FaceData {
    pub fn zeros(grid: GridSpec) -> Self {
        let axes = (0..grid.dim()).map(|a| vec![0.0; grid.num_faces(a)]).collect();
        Self { grid, axes }
    }

    pub fn from_axes(grid: GridSpec, axes: Vec<Vec<f64>>) -> Result<Self> {
        if axes.len() != grid.dim()
            || axes.iter().enumerate().any(|(a, v)| v.len() != grid.num_faces(a))
        {
            return Err(Error::InvalidArgument("face data does not match grid".into()));
        }
        Ok(Self { grid, axes })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn axis(&self, axis: usize) -> &[f64] {
        &self.axes[axis]
    }

    pub fn axis_mut(&mut self, axis: usize) -> &mut [f64] {
        &mut self.axes[axis]
    }

    pub fn max_abs(&self) -> f64 {
        self.axes
            .iter()
            .flatten()
            .fold(0.0f64, |m, &x| m.max(x.abs()))
    }

    pub fn zip_map(&self, other: &FaceData, f: impl Fn(f64, f64) -> f64) -> FaceData {
        let axes = self
            .axes
            .iter()
            .zip(&other.axes)
            .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect())
            .collect();
        FaceData {
            grid: self.grid,
            axes,
        }
    }
}

/// Midpoint quadrature of `f` over the box.
pub fn integrate(f: &Field) -> Result<f64> {
    f.check_finite()?;
    Ok(sum_cells(f.grid(), f.values()))
}

/// Σ values · cell volume without validation.
pub(crate) fn sum_cells(grid: &GridSpec, values: &[f64]) -> f64 {
    values.iter().sum::<f64>() * grid.cell_volume()
}

/// Σ over interior faces of value · dual-cell volume. The dual cell of an
/// interior face has the same volume as a primal cell.
pub fn face_quadrature(data: &FaceData) -> f64 {
    let vol = data.grid.cell_volume();
    data.axes.iter().flatten().sum::<f64>() * vol
}

pub fn face_gradient(f: &Field) -> Result<FaceData> {
    f.check_finite()?;
    Ok(face_gradient_unchecked(f.grid(), f.values()))
}

pub(crate) fn face_gradient_unchecked(grid: &GridSpec, values: &[f64]) -> FaceData {
    let mut out = FaceData::zeros(*grid);
    for axis in 0..grid.dim() {
        let inv_h = 1.0 / grid.spacing(axis);
        let faces = &mut out.axes[axis];
        grid.for_each_face(axis, |face, l, r| {
            faces[face] = (values[r] - values[l]) * inv_h;
        });
    }
    out
}

/// Discrete divergence of a face flux; boundary faces contribute nothing.
pub fn div_faces(flux: &FaceData) -> Field {
    let grid = flux.grid;
    let mut out = vec![0.0; grid.num_cells()];
    for axis in 0..grid.dim() {
        let inv_h = 1.0 / grid.spacing(axis);
        let faces = &flux.axes[axis];
        grid.for_each_face(axis, |face, l, r| {
            let q = faces[face] * inv_h;
            out[l] += q;
            out[r] -= q;
        });
    }
    Field::from_raw(grid, out)
}

pub fn laplacian_neumann(f: &Field) -> Result<Field> {
    f.check_finite()?;
    Ok(laplacian_unchecked(f.grid(), f.values()))
}

pub(crate) fn laplacian_unchecked(grid: &GridSpec, values: &[f64]) -> Field {
    let mut out = vec![0.0; grid.num_cells()];
    for axis in 0..grid.dim() {
        let inv_h2 = 1.0 / (grid.spacing(axis) * grid.spacing(axis));
        grid.for_each_face(axis, |_, l, r| {
            let d = (values[r] - values[l]) * inv_h2;
            out[l] += d;
            out[r] -= d;
        });
    }
    Field::from_raw(*grid, out)
}

/// (∫ |f|^p)^{1/p}. Non-integer `p` requires `f ≥ 0`.
pub fn lp_norm(f: &Field, p: f64) -> Result<f64> {
    if !(p.is_finite() && p > 0.0) {
        return Err(Error::InvalidArgument(format!("p must be positive, got {p}")));
    }
    f.check_finite()?;
    let integer = p.fract() == 0.0;
    if !integer && f.values().iter().any(|&x| x < 0.0) {
        return Err(Error::FractionalPowerOfNegative);
    }
    let sum: f64 = if p == 1.0 {
        f.values().iter().map(|x| x.abs()).sum()
    } else if p == 2.0 {
        f.values().iter().map(|x| x * x).sum()
    } else {
        f.values().iter().map(|x| x.abs().powf(p)).sum()
    };
    Ok((sum * f.grid().cell_volume()).powf(1.0 / p))
}

/// |∇f|² at cell centers: per axis, the mean of the squared gradients on the
/// two bounding faces (a boundary face contributes zero).
pub fn cell_grad_sq(f: &Field) -> Vec<f64> {
    cell_grad_sq_from_faces(&face_gradient_unchecked(f.grid(), f.values()))
}

pub(crate) fn cell_grad_sq_from_faces(grad: &FaceData) -> Vec<f64> {
    let grid = grad.grid;
    let mut out = vec![0.0; grid.num_cells()];
    for axis in 0..grid.dim() {
        let g = &grad.axes[axis];
        grid.for_each_face(axis, |face, l, r| {
            let s = 0.5 * g[face] * g[face];
            out[l] += s;
            out[r] += s;
        });
    }
    out
}

/// Σ_faces coef_f · a_f · b_f · vol with coef the arithmetic face mean of a cell quantity.
pub(crate) fn weighted_face_product(coef: &[f64], a: &FaceData, b: &FaceData) -> f64 {
    let grid = a.grid;
    let mut sum = 0.0;
    for axis in 0..grid.dim() {
        let (ga, gb) = (&a.axes[axis], &b.axes[axis]);
        grid.for_each_face(axis, |face, l, r| {
            sum += 0.5 * (coef[l] + coef[r]) * ga[face] * gb[face];
        });
    }
    sum * grid.cell_volume()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn line(n: usize) -> GridSpec {
        GridSpec::uniform(1, n, 1.0).unwrap()
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(GridSpec::new(&[1], &[1.0]).is_err());
        assert!(GridSpec::new(&[4, 4], &[1.0]).is_err());
        assert!(GridSpec::new(&[4], &[0.0]).is_err());
        assert!(GridSpec::new(&[], &[]).is_err());
        assert!(GridSpec::new(&[2, 2, 2, 2], &[1.0; 4]).is_err());
    }

    #[test]
    fn integrate_constant_is_exact() {
        let g = GridSpec::uniform(2, 16, 1.0).unwrap();
        let f = Field::constant(g, 2.0).unwrap();
        assert_eq!(integrate(&f).unwrap(), 2.0);
    }

    #[test]
    fn integrate_linear_is_exact() {
        for n in [2, 3, 7, 64, 101] {
            let f = Field::from_fn(line(n), |x| x[0]).unwrap();
            assert!((integrate(&f).unwrap() - 0.5).abs() < 1e-15, "n={n}");
        }
    }

    #[test]
    fn integrate_quadratic_within_midpoint_bound() {
        // midpoint error = h²/24 · ∫f'' = 1e-4 · 2 / 24
        let f = Field::from_fn(line(100), |x| x[0] * x[0]).unwrap();
        let err = (integrate(&f).unwrap() - 1.0 / 3.0).abs();
        assert!(err < 1e-4);
        assert!((err - 2.0e-4 / 24.0).abs() < 1e-15);
    }

    #[test]
    fn integrate_rejects_nan() {
        let f = Field::from_raw(line(4), vec![0.0, f64::NAN, 1.0, 1.0]);
        assert_eq!(integrate(&f), Err(Error::NonFiniteField));
        assert!(Field::new(line(2), vec![f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let g = GridSpec::uniform(3, 5, 2.0).unwrap();
        let f = Field::constant(g, 3.7).unwrap();
        assert_eq!(face_gradient(&f).unwrap().max_abs(), 0.0);
        assert!(laplacian_neumann(&f).unwrap().values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn gradient_of_linear_is_one() {
        let f = Field::from_fn(line(10), |x| x[0]).unwrap();
        let g = face_gradient(&f).unwrap();
        assert_eq!(g.axis(0).len(), 9);
        for &d in g.axis(0) {
            assert!((d - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_of_cosine_is_second_order() {
        let n = 64;
        let grid = line(n);
        let f = Field::from_fn(grid, |x| (PI * x[0]).cos()).unwrap();
        let g = face_gradient(&f).unwrap();
        let h = grid.spacing(0);
        let err = g
            .axis(0)
            .iter()
            .enumerate()
            .map(|(k, &d)| (d + PI * (PI * (k + 1) as f64 * h).sin()).abs())
            .fold(0.0, f64::max);
        assert!(err < 3e-3, "err={err}");
    }

    #[test]
    fn divergence_of_zero_flux_is_zero() {
        let g = GridSpec::uniform(2, 4, 1.0).unwrap();
        assert!(div_faces(&FaceData::zeros(g)).values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn div_of_gradient_matches_laplacian() {
        let g = GridSpec::new(&[6, 5], &[1.0, 2.0]).unwrap();
        let f = Field::from_fn(g, |x| (x[0] * 3.0).sin() + x[1] * x[1]).unwrap();
        let a = div_faces(&face_gradient(&f).unwrap());
        let b = laplacian_neumann(&f).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn laplacian_of_cosine() {
        let grid = line(128);
        let f = Field::from_fn(grid, |x| (PI * x[0]).cos()).unwrap();
        let lap = laplacian_neumann(&f).unwrap();
        let err = lap
            .values()
            .iter()
            .zip(f.values())
            .map(|(l, c)| (l + PI * PI * c).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-3, "err={err}");
    }

    #[test]
    fn lp_norm_cases() {
        let g = GridSpec::new(&[4, 4], &[2.0, 0.5]).unwrap();
        let c = Field::constant(g, 3.0).unwrap();
        assert!((lp_norm(&c, 2.5).unwrap() - 3.0).abs() < 1e-14);
        let g = GridSpec::new(&[4, 4], &[2.0, 3.0]).unwrap();
        let c = Field::constant(g, 3.0).unwrap();
        assert!((lp_norm(&c, 2.0).unwrap() - 3.0 * 6f64.sqrt()).abs() < 1e-13);

        let f = Field::from_fn(line(9), |x| x[0] * x[0]).unwrap();
        assert!((lp_norm(&f, 1.0).unwrap() - integrate(&f).unwrap()).abs() < 1e-15);

        let neg = Field::new(line(2), vec![-1.0, 1.0]).unwrap();
        assert_eq!(lp_norm(&neg, 1.5), Err(Error::FractionalPowerOfNegative));
        assert!((lp_norm(&neg, 2.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(lp_norm(&neg, 0.0).is_err());
    }

    #[test]
    fn lp_norm_against_fine_quadrature() {
        // Oracle: composite Simpson on 20000 panels of (1 + cos(πx)/2)^3.
        let m = 20_000;
        let fx = |x: f64| (1.0 + 0.5 * (PI * x).cos()).powi(3);
        let hs = 1.0 / m as f64;
        let mut s = fx(0.0) + fx(1.0);
        for k in 1..m {
            s += if k % 2 == 1 { 4.0 } else { 2.0 } * fx(k as f64 * hs);
        }
        let reference = (s * hs / 3.0).cbrt();
        let f = Field::from_fn(line(256), |x| 1.0 + 0.5 * (PI * x[0]).cos()).unwrap();
        let got = lp_norm(&f, 3.0).unwrap();
        assert!((got - reference).abs() < 1e-6, "got {got}, ref {reference}");
    }

    #[test]
    fn face_layout_2d() {
        let g = GridSpec::new(&[3, 4], &[1.0, 1.0]).unwrap();
        assert_eq!(g.num_faces(0), 2 * 4);
        assert_eq!(g.num_faces(1), 3 * 3);
        let mut seen = Vec::new();
        g.for_each_face(1, |f, l, r| seen.push((f, l, r)));
        assert_eq!(seen[0], (0, 0, 1));
        assert_eq!(seen[3], (3, 4, 5));
        let mut seen = Vec::new();
        g.for_each_face(0, |f, l, r| seen.push((f, l, r)));
        assert_eq!(seen[5], (5, 5, 9));
        assert_eq!(g.cell_coords(6), [1, 2, 0]);
        assert!(g.is_boundary_cell(0));
        assert!(!g.is_boundary_cell(5));
    }
}
