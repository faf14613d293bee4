//! Structured rectangular grids, node-valued scalar fields and the discrete
//! differential operators used by the residual.
//!
//! Nodes are stored row-major with `i` (the x index) running fastest, so node
//! `(i, j)` lives at `j * nx + i` and sits at `(x0 + i * dx, y0 + j * dy)`.

mod io;
pub(crate) mod upwind;

pub use io::{read_esri_ascii, write_esri_ascii, write_field, write_field_csv};
pub use upwind::{count_local_minima, upwind_gradient_norm, Godunov, UpwindScheme};

use crate::error::{Error, Result};

/// A uniform rectangular grid of `nx * ny` nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    pub x0: f64,
    pub y0: f64,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, dx: f64, dy: f64, x0: f64, y0: f64) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidDimension(format!(
                "node counts must be at least 2, got {nx}x{ny}"
            )));
        }
        if !(dx > 0.0 && dx.is_finite() && dy > 0.0 && dy.is_finite()) {
            return Err(Error::InvalidDimension(format!(
                "mesh steps must be positive and finite, got dx={dx}, dy={dy}"
            )));
        }
        if !(x0.is_finite() && y0.is_finite()) {
            return Err(Error::InvalidDimension("origin must be finite".into()));
        }
        Ok(Self { nx, ny, dx, dy, x0, y0 })
    }

    /// Unit-step grid with origin at zero.
    pub fn unit(nx: usize, ny: usize) -> Result<Self> {
        Self::new(nx, ny, 1.0, 1.0, 0.0, 0.0)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    #[inline]
    pub fn ij(&self, index: usize) -> (usize, usize) {
        (index % self.nx, index / self.nx)
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.dx
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        self.y0 + j as f64 * self.dy
    }

    #[inline]
    pub fn coords(&self, index: usize) -> (f64, f64) {
        let (i, j) = self.ij(index);
        (self.x(i), self.y(j))
    }

    pub fn x_max(&self) -> f64 {
        self.x(self.nx - 1)
    }

    pub fn y_max(&self) -> f64 {
        self.y(self.ny - 1)
    }

    pub fn cell_area(&self) -> f64 {
        self.dx * self.dy
    }

    /// True if `(x, y)` lies in the closed bounding box of the nodes.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x_max() && y >= self.y0 && y <= self.y_max()
    }

    /// Index of the node nearest to `(x, y)`, clamped to the grid.
    pub fn nearest_node(&self, x: f64, y: f64) -> usize {
        let clamp = |v: f64, n: usize| v.round().clamp(0.0, (n - 1) as f64) as usize;
        let i = clamp((x - self.x0) / self.dx, self.nx);
        let j = clamp((y - self.y0) / self.dy, self.ny);
        self.index(i, j)
    }

    /// Calls `f` with the index of every existing 4-neighbor of `index`.
    #[inline]
    pub fn for_each_neighbor(&self, index: usize, mut f: impl FnMut(usize)) {
        let (i, j) = self.ij(index);
        if i > 0 {
            f(index - 1);
        }
        if i + 1 < self.nx {
            f(index + 1);
        }
        if j > 0 {
            f(index - self.nx);
        }
        if j + 1 < self.ny {
            f(index + self.nx);
        }
    }

    pub fn check_len(&self, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(Error::ShapeMismatch { expected: self.len(), actual: len });
        }
        Ok(())
    }
}

/// One real value per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        grid.check_len(values.len())?;
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Self { grid, values: vec![value; grid.len()] }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    /// Samples `f(x, y)` at every node.
    pub fn from_fn(grid: Grid, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|k| {
                let (x, y) = grid.coords(k);
                f(x, y)
            })
            .collect();
        Self { grid, values }
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let k = self.grid.index(i, j);
        self.values[k] = value;
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Errors unless `self` lives on `grid`.
    pub fn expect_grid(&self, grid: &Grid) -> Result<()> {
        if self.grid.nx != grid.nx || self.grid.ny != grid.ny {
            return Err(Error::ShapeMismatch { expected: grid.len(), actual: self.values.len() });
        }
        Ok(())
    }

    /// Bilinear interpolation at `(x, y)`.
    pub fn bilinear(&self, x: f64, y: f64) -> Result<f64> {
        let g = &self.grid;
        if !g.contains(x, y) {
            return Err(Error::OutOfDomain { x, y });
        }
        let (i, u) = cell_coord((x - g.x0) / g.dx, g.nx);
        let (j, v) = cell_coord((y - g.y0) / g.dy, g.ny);
        let f00 = self.at(i, j);
        let f10 = self.at(i + 1, j);
        let f01 = self.at(i, j + 1);
        let f11 = self.at(i + 1, j + 1);
        Ok((1.0 - u) * (1.0 - v) * f00 + u * (1.0 - v) * f10 + (1.0 - u) * v * f01 + u * v * f11)
    }
}

/// Splits a fractional node coordinate into a cell index in `[0, n - 2]` and
/// the local offset in `[0, 1]`.
#[inline]
pub(crate) fn cell_coord(s: f64, n: usize) -> (usize, f64) {
    let i = (s.floor().max(0.0) as usize).min(n - 2);
    (i, (s - i as f64).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn make_grid_paper_size() {
        let g = Grid::new(100, 100, 1.0, 1.0, 0.0, 0.0).unwrap();
        assert_eq!(g.len(), 10_000);
        assert_eq!(g.coords(g.index(99, 99)), (99.0, 99.0));
    }

    #[test]
    fn make_grid_smallest_and_invalid() {
        assert!(Grid::new(2, 2, 1.0, 1.0, 0.0, 0.0).is_ok());
        assert!(matches!(Grid::new(1, 5, 1.0, 1.0, 0.0, 0.0), Err(Error::InvalidDimension(_))));
        assert!(Grid::new(5, 5, 0.0, 1.0, 0.0, 0.0).is_err());
        assert!(Grid::new(5, 5, 1.0, -1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn node_coordinates_follow_origin_and_steps() {
        let g = Grid::new(4, 3, 2.0, 0.5, 10.0, -1.0).unwrap();
        assert_eq!(g.coords(g.index(3, 2)), (16.0, 0.0));
        assert_eq!(g.ij(g.index(1, 2)), (1, 2));
    }

    #[test]
    fn bilinear_reproduces_bilinear_functions() {
        let g = Grid::new(5, 4, 0.5, 2.0, 1.0, 0.0).unwrap();
        let f = |x: f64, y: f64| 3.0 + 2.0 * x - y + 0.5 * x * y;
        let field = ScalarField::from_fn(g, f);
        for &(x, y) in &[(1.3, 0.7), (2.9, 5.9), (1.0, 0.0), (3.0, 6.0)] {
            assert!((field.bilinear(x, y).unwrap() - f(x, y)).abs() < 1e-12);
        }
        assert!(field.bilinear(0.9, 1.0).is_err());
    }

    #[test]
    fn neighbors_at_corner_and_interior() {
        let g = Grid::unit(3, 3).unwrap();
        let mut n = Vec::new();
        g.for_each_neighbor(0, |k| n.push(k));
        assert_eq!(n, vec![1, 3]);
        n.clear();
        g.for_each_neighbor(4, |k| n.push(k));
        assert_eq!(n, vec![3, 5, 1, 7]);
    }
}
