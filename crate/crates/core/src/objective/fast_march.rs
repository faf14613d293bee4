use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    time: f64,
    node: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    // min-heap on time, then node index
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Smallest accepted neighbor value along one axis, or infinity.
#[inline]
fn axis_min(t: &[f64], known: &[bool], a: Option<usize>, b: Option<usize>) -> f64 {
    let pick = |n: Option<usize>| n.filter(|&n| known[n]).map_or(f64::INFINITY, |n| t[n]);
    pick(a).min(pick(b))
}

/// First-order upwind update solving `Σ ((u − a)/h)₊² = 1/R²`.
#[inline]
fn update(a: f64, hx: f64, b: f64, hy: f64, rate: f64) -> f64 {
    let s = 1.0 / rate;
    let one_axis = (a + hx * s).min(b + hy * s);
    if !a.is_finite() || !b.is_finite() {
        return one_axis;
    }
    // (u-a)²/hx² + (u-b)²/hy² = s²
    let (wx, wy) = (1.0 / (hx * hx), 1.0 / (hy * hy));
    let qa = wx + wy;
    let qb = -2.0 * (a * wx + b * wy);
    let qc = a * a * wx + b * b * wy - s * s;
    let disc = qb * qb - 4.0 * qa * qc;
    if disc < 0.0 {
        return one_axis;
    }
    let u = (-qb + disc.sqrt()) / (2.0 * qa);
    if u >= a.max(b) {
        u
    } else {
        one_axis
    }
}

/// Fast-marching solution of `‖∇T‖ = 1/R` with fixed source values.
///
/// Nodes are accepted in order of increasing tentative time, ties broken by
/// node index.
pub fn fast_march(grid: &Grid, ros: &ScalarField, sources: &[(usize, f64)]) -> Result<ScalarField> {
    ros.expect_grid(grid)?;
    if sources.is_empty() {
        return Err(Error::InvalidParameter("fast marching needs at least one source".into()));
    }
    if let Some(r) = ros.values().iter().find(|r| !(**r > 0.0 && r.is_finite())) {
        return Err(Error::InvalidParameter(format!("rate of spread must be positive, got {r}")));
    }
    let n = grid.len();
    let mut t = vec![f64::INFINITY; n];
    let mut known = vec![false; n];
    let mut heap = BinaryHeap::new();
    for &(k, time) in sources {
        if k >= n || !time.is_finite() {
            return Err(Error::InvalidParameter(format!("invalid source ({k}, {time})")));
        }
        if time < t[k] {
            t[k] = time;
            heap.push(Entry { time, node: k });
        }
    }
    let rate = ros.values();
    let (nx, ny) = (grid.nx, grid.ny);
    while let Some(Entry { time, node }) = heap.pop() {
        if known[node] || time > t[node] {
            continue;
        }
        known[node] = true;
        grid.for_each_neighbor(node, |m| {
            if known[m] {
                return;
            }
            let (i, j) = grid.ij(m);
            let a = axis_min(&t, &known, (i > 0).then(|| m - 1), (i + 1 < nx).then(|| m + 1));
            let b = axis_min(&t, &known, (j > 0).then(|| m - nx), (j + 1 < ny).then(|| m + nx));
            let u = update(a, grid.dx, b, grid.dy, rate[m]);
            if u < t[m] {
                t[m] = u;
                heap.push(Entry { time: u, node: m });
            }
        });
    }
    ScalarField::new(*grid, t)
}
