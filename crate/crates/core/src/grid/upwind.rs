//! Causality-respecting gradient of the arrival time.

use super::{Grid, ScalarField};
use crate::error::Result;

/// A one-node upwind gradient stencil.
///
/// Implementations return the signed gradient components at node `(i, j)`,
/// reading node values through `value`. The sign points toward increasing
/// arrival time, i.e. in the spread direction.
pub trait UpwindScheme {
    fn gradient(&self, grid: &Grid, i: usize, j: usize, value: &dyn Fn(usize) -> f64) -> [f64; 2];
}

/// First-order Godunov upwinding.
///
/// Per axis the derivative is `max(D⁻T, −D⁺T, 0)`; at an edge only the
/// one-sided difference toward the interior neighbor exists.
#[derive(Debug, Clone, Copy, Default)]
pub struct Godunov;

impl UpwindScheme for Godunov {
    fn gradient(&self, grid: &Grid, i: usize, j: usize, value: &dyn Fn(usize) -> f64) -> [f64; 2] {
        godunov_gradient(grid, i, j, value)
    }
}

/// Signed Godunov derivative along one axis given the center value and the
/// optional lower/upper neighbors.
#[inline]
fn godunov_axis(center: f64, lower: Option<f64>, upper: Option<f64>, h: f64) -> f64 {
    // backward difference D⁻T and the negated forward difference −D⁺T
    let back = lower.map_or(f64::NEG_INFINITY, |l| (center - l) / h);
    let fwd = upper.map_or(f64::NEG_INFINITY, |u| (center - u) / h);
    if back <= 0.0 && fwd <= 0.0 {
        0.0
    } else if back >= fwd {
        back
    } else {
        -fwd
    }
}

/// Signed Godunov gradient at `(i, j)`.
#[inline]
pub(crate) fn godunov_gradient<F: Fn(usize) -> f64 + ?Sized>(
    grid: &Grid,
    i: usize,
    j: usize,
    value: &F,
) -> [f64; 2] {
    let k = grid.index(i, j);
    let c = value(k);
    let left = (i > 0).then(|| value(k - 1));
    let right = (i + 1 < grid.nx).then(|| value(k + 1));
    let down = (j > 0).then(|| value(k - grid.nx));
    let up = (j + 1 < grid.ny).then(|| value(k + grid.nx));
    [godunov_axis(c, left, right, grid.dx), godunov_axis(c, down, up, grid.dy)]
}

/// Godunov upwind norm `‖∇T‖` at every node.
pub fn upwind_gradient_norm(t: &ScalarField) -> ScalarField {
    upwind_gradient_norm_with(t, &Godunov)
}

pub fn upwind_gradient_norm_with(t: &ScalarField, scheme: &dyn UpwindScheme) -> ScalarField {
    let grid = *t.grid();
    let v = t.values();
    let value = |k: usize| v[k];
    let out = (0..grid.len())
        .map(|k| {
            let (i, j) = grid.ij(k);
            let [gx, gy] = scheme.gradient(&grid, i, j, &value);
            gx.hypot(gy)
        })
        .collect();
    ScalarField::new(grid, out).expect("same grid")
}

/// True if node `k` is strictly below every existing 4-neighbor.
#[inline]
pub(crate) fn is_strict_local_min<F: Fn(usize) -> f64>(grid: &Grid, k: usize, value: F) -> Option<f64> {
    let c = value(k);
    let mut min_nb = f64::INFINITY;
    grid.for_each_neighbor(k, |n| min_nb = min_nb.min(value(n)));
    (c < min_nb).then_some(min_nb)
}

/// Number of strict local minima of `t`, not counting the `exempt` nodes.
pub fn count_local_minima(t: &ScalarField, exempt: &[usize]) -> Result<usize> {
    let grid = *t.grid();
    let v = t.values();
    let mut skip = vec![false; grid.len()];
    for &k in exempt {
        if k < grid.len() {
            skip[k] = true;
        } else {
            return Err(crate::Error::InvalidParameter(format!("exempt node {k} outside grid")));
        }
    }
    Ok((0..grid.len())
        .filter(|&k| !skip[k] && is_strict_local_min(&grid, k, |n| v[n]).is_some())
        .count())
}
