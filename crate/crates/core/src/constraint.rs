//! Perimeter constraints `H T = g`.
//!
//! Each grid cell is split into two triangles along the diagonal from
//! `(i, j)` to `(i+1, j+1)`. A perimeter point contributes the row of its
//! barycentric weights; all points of one perimeter that land in the same
//! triangle are condensed into a single summed row whose right-hand side is
//! the sum of their times.
//!
//! Rows are grouped into blocks that share no grid node. The Gram matrix
//! `H Hᵀ` is block diagonal under that grouping, so each block is factored
//! on its own and a projection only touches the blocks its input reaches.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};
use crate::sparse::{Accumulator, SparseVec};

/// Relative pivot threshold of the Gram factorization.
pub const GRAM_PIVOT_TOL: f64 = 1e-12;

/// A perimeter point with its observed arrival time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerimeterPoint {
    pub x: f64,
    pub y: f64,
    pub time: f64,
}

/// An observed perimeter: one or more points. A single point is an ignition.
#[derive(Debug, Clone, PartialEq)]
pub struct Perimeter {
    points: Vec<PerimeterPoint>,
}

impl Perimeter {
    pub fn new(points: Vec<PerimeterPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidParameter("a perimeter needs at least one point".into()));
        }
        if let Some(p) = points.iter().find(|p| !(p.x.is_finite() && p.y.is_finite() && p.time.is_finite())) {
            return Err(Error::InvalidParameter(format!("non-finite perimeter point {p:?}")));
        }
        Ok(Self { points })
    }

    /// All points share one arrival time.
    pub fn isochrone(points: &[(f64, f64)], time: f64) -> Result<Self> {
        Self::new(points.iter().map(|&(x, y)| PerimeterPoint { x, y, time }).collect())
    }

    pub fn ignition(x: f64, y: f64, time: f64) -> Result<Self> {
        Self::isochrone(&[(x, y)], time)
    }

    pub fn points(&self) -> &[PerimeterPoint] {
        &self.points
    }

    pub fn is_point(&self) -> bool {
        self.points.len() == 1
    }
}

/// Result of locating a point in the triangulated grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointLocation {
    pub triangle: usize,
    pub nodes: [usize; 3],
    pub weights: [f64; 3],
}

/// Cell index for fractional node coordinate `s`, assigning points on a
/// shared edge to the lower/left cell.
fn lower_left_cell(s: f64, n: usize) -> usize {
    (s.ceil() - 1.0).clamp(0.0, (n - 2) as f64) as usize
}

/// Finds the triangle containing `(x, y)` and its barycentric weights.
///
/// The lower triangle of cell `(i, j)` has vertices `(i,j), (i+1,j), (i+1,j+1)`
/// and id `2c`; the upper one `(i,j), (i+1,j+1), (i,j+1)` and id `2c + 1`,
/// where `c = j (nx-1) + i`. Points on the diagonal belong to the lower one.
pub fn locate_point(grid: &Grid, x: f64, y: f64) -> Result<PointLocation> {
    if !(x.is_finite() && y.is_finite()) || !grid.contains(x, y) {
        return Err(Error::OutOfDomain { x, y });
    }
    let s = (x - grid.x0) / grid.dx;
    let t = (y - grid.y0) / grid.dy;
    let i = lower_left_cell(s, grid.nx);
    let j = lower_left_cell(t, grid.ny);
    let u = (s - i as f64).clamp(0.0, 1.0);
    let v = (t - j as f64).clamp(0.0, 1.0);
    let cell = j * (grid.nx - 1) + i;
    let n00 = grid.index(i, j);
    let n10 = grid.index(i + 1, j);
    let n11 = grid.index(i + 1, j + 1);
    let n01 = grid.index(i, j + 1);
    Ok(if u >= v {
        PointLocation { triangle: 2 * cell, nodes: [n00, n10, n11], weights: [1.0 - u, u - v, v] }
    } else {
        PointLocation { triangle: 2 * cell + 1, nodes: [n00, n11, n01], weights: [1.0 - v, u, v - u] }
    })
}

/// Provenance of a condensed row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowLabel {
    pub perimeter: usize,
    pub triangle: usize,
}

#[derive(Debug, Clone)]
struct GramBlock {
    rows: Vec<usize>,
    /// Lower Cholesky factor, row-major `m x m`.
    factor: Vec<f64>,
}

impl GramBlock {
    fn solve_in_place(&self, b: &mut [f64]) {
        let m = self.rows.len();
        let l = &self.factor;
        for i in 0..m {
            let mut s = b[i];
            for k in 0..i {
                s -= l[i * m + k] * b[k];
            }
            b[i] = s / l[i * m + i];
        }
        for i in (0..m).rev() {
            let mut s = b[i];
            for k in i + 1..m {
                s -= l[k * m + i] * b[k];
            }
            b[i] = s / l[i * m + i];
        }
    }
}

/// Dense Cholesky in place (lower triangle); errors when a pivot falls below
/// `GRAM_PIVOT_TOL` times the largest diagonal entry.
fn cholesky(a: &mut [f64], m: usize, row_offset: &[usize]) -> Result<()> {
    let scale = (0..m).fold(0.0f64, |s, i| s.max(a[i * m + i]));
    for j in 0..m {
        let mut d = a[j * m + j];
        for k in 0..j {
            d -= a[j * m + k] * a[j * m + k];
        }
        if !(d > GRAM_PIVOT_TOL * scale) {
            return Err(Error::RankDeficient { row: row_offset[j], pivot: d });
        }
        let d = d.sqrt();
        a[j * m + j] = d;
        for i in j + 1..m {
            let mut s = a[i * m + j];
            for k in 0..j {
                s -= a[i * m + k] * a[j * m + k];
            }
            a[i * m + j] = s / d;
        }
        for i in 0..j {
            a[i * m + j] = 0.0;
        }
    }
    Ok(())
}

/// The sparse system `H T = g` together with a factorization of `H Hᵀ`.
#[derive(Debug, Clone)]
pub struct ConstraintSystem {
    grid: Grid,
    rows: Vec<SparseVec>,
    rhs: Vec<f64>,
    counts: Vec<usize>,
    labels: Vec<Option<RowLabel>>,
    col_ptr: Vec<usize>,
    col_entries: Vec<(usize, f64)>,
    blocks: Vec<GramBlock>,
    /// (block, position within block) for every row.
    row_block: Vec<(usize, usize)>,
}

/// Reusable buffers for [`ConstraintSystem::project_sparse`].
#[derive(Debug, Clone)]
pub struct ProjectionScratch {
    nodes: Accumulator,
    rows: Accumulator,
}

impl ProjectionScratch {
    pub fn new(c: &ConstraintSystem) -> Self {
        Self { nodes: Accumulator::new(c.grid.len()), rows: Accumulator::new(c.rows.len().max(1)) }
    }
}

impl ConstraintSystem {
    /// Assembles a system from explicit sparse rows. Entries for the same
    /// node within a row are summed. Factors the Gram matrix.
    pub fn from_rows(grid: Grid, rows: Vec<Vec<(usize, f64)>>, rhs: Vec<f64>) -> Result<Self> {
        let n = rows.len();
        Self::assemble(grid, rows, rhs, vec![1; n], vec![None; n])
    }

    fn assemble(
        grid: Grid,
        raw_rows: Vec<Vec<(usize, f64)>>,
        rhs: Vec<f64>,
        counts: Vec<usize>,
        labels: Vec<Option<RowLabel>>,
    ) -> Result<Self> {
        if raw_rows.len() != rhs.len() {
            return Err(Error::InvalidParameter(format!(
                "{} constraint rows but {} right-hand-side entries",
                raw_rows.len(),
                rhs.len()
            )));
        }
        if let Some(v) = rhs.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite constraint value {v}")));
        }
        let nn = grid.len();
        let mut acc = Accumulator::new(nn);
        let mut rows = Vec::with_capacity(raw_rows.len());
        for (r, row) in raw_rows.into_iter().enumerate() {
            for (k, c) in row {
                if k >= nn || !c.is_finite() {
                    return Err(Error::InvalidParameter(format!("bad entry ({k}, {c}) in constraint row {r}")));
                }
                acc.add(k, c);
            }
            let mut s = acc.drain();
            let keep: Vec<bool> = s.val.iter().map(|&v| v != 0.0).collect();
            let mut it = keep.iter();
            s.idx.retain(|_| *it.next().unwrap());
            let mut it = keep.iter();
            s.val.retain(|_| *it.next().unwrap());
            if s.is_empty() {
                return Err(Error::RankDeficient { row: r, pivot: 0.0 });
            }
            rows.push(s);
        }

        // column-compressed transpose
        let mut col_ptr = vec![0usize; nn + 1];
        for row in &rows {
            for &k in &row.idx {
                col_ptr[k + 1] += 1;
            }
        }
        for k in 0..nn {
            col_ptr[k + 1] += col_ptr[k];
        }
        let mut fill = col_ptr.clone();
        let mut col_entries = vec![(0usize, 0.0f64); col_ptr[nn]];
        for (r, row) in rows.iter().enumerate() {
            for (k, c) in row.iter() {
                col_entries[fill[k]] = (r, c);
                fill[k] += 1;
            }
        }

        // rows sharing a node end up in the same block
        let m = rows.len();
        let mut parent: Vec<usize> = (0..m).collect();
        fn find(p: &mut [usize], mut a: usize) -> usize {
            while p[a] != a {
                p[a] = p[p[a]];
                a = p[a];
            }
            a
        }
        for k in 0..nn {
            let col = &col_entries[col_ptr[k]..col_ptr[k + 1]];
            if let Some(&(r0, _)) = col.first() {
                for &(r, _) in &col[1..] {
                    let (a, b) = (find(&mut parent, r0), find(&mut parent, r));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        }
        let mut block_of_root = BTreeMap::new();
        let mut blocks: Vec<GramBlock> = Vec::new();
        let mut row_block = vec![(0usize, 0usize); m];
        for (r, slot) in row_block.iter_mut().enumerate() {
            let root = find(&mut parent, r);
            let b = *block_of_root.entry(root).or_insert_with(|| {
                blocks.push(GramBlock { rows: Vec::new(), factor: Vec::new() });
                blocks.len() - 1
            });
            *slot = (b, blocks[b].rows.len());
            blocks[b].rows.push(r);
        }

        let mut sys = Self { grid, rows, rhs, counts, labels, col_ptr, col_entries, blocks, row_block };
        sys.factor_blocks()?;
        Ok(sys)
    }

    fn factor_blocks(&mut self) -> Result<()> {
        for b in 0..self.blocks.len() {
            let rows = self.blocks[b].rows.clone();
            let m = rows.len();
            let mut gram = vec![0.0; m * m];
            for (a, &ra) in rows.iter().enumerate() {
                for (k, ca) in self.rows[ra].iter() {
                    for &(rb, cb) in self.column(k) {
                        let (bb, pos) = self.row_block[rb];
                        debug_assert_eq!(bb, b);
                        gram[a * m + pos] += ca * cb;
                    }
                }
            }
            cholesky(&mut gram, m, &rows)?;
            self.blocks[b].factor = gram;
        }
        Ok(())
    }

    #[inline]
    fn column(&self, node: usize) -> &[(usize, f64)] {
        &self.col_entries[self.col_ptr[node]..self.col_ptr[node + 1]]
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, r: usize) -> &SparseVec {
        &self.rows[r]
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    /// Number of perimeter points condensed into each row.
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn label(&self, r: usize) -> Option<RowLabel> {
        self.labels[r]
    }

    /// True if some row has a nonzero coefficient at `node`.
    #[inline]
    pub fn touches(&self, node: usize) -> bool {
        self.col_ptr[node] != self.col_ptr[node + 1]
    }

    /// Sorted nodes in the support of `H`.
    pub fn constrained_nodes(&self) -> Vec<usize> {
        (0..self.grid.len()).filter(|&k| self.touches(k)).collect()
    }

    /// `H v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|row| row.iter().map(|(k, c)| c * v[k]).sum()).collect()
    }

    /// `Hᵀ y` as a dense node vector.
    pub fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.len()];
        for (row, &yr) in self.rows.iter().zip(y) {
            for (k, c) in row.iter() {
                out[k] += c * yr;
            }
        }
        out
    }

    /// Solves `H Hᵀ y = b`.
    pub fn gram_solve(&self, b: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.rows.len()];
        let mut buf = Vec::new();
        for block in &self.blocks {
            buf.clear();
            buf.extend(block.rows.iter().map(|&r| b[r]));
            if buf.iter().all(|&v| v == 0.0) {
                continue;
            }
            block.solve_in_place(&mut buf);
            for (&r, &v) in block.rows.iter().zip(&buf) {
                y[r] = v;
            }
        }
        y
    }

    /// Minimum-norm solution `u₀ = Hᵀ (H Hᵀ)⁻¹ g`.
    pub fn feasible_point(&self) -> ScalarField {
        let y = self.gram_solve(&self.rhs);
        ScalarField::new(self.grid, self.apply_transpose(&y)).expect("grid sized")
    }

    /// Orthogonal projection onto the null space of `H`:
    /// `P v = v − Hᵀ (H Hᵀ)⁻¹ H v`.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let y = self.gram_solve(&self.apply(v));
        let corr = self.apply_transpose(&y);
        v.iter().zip(corr).map(|(a, b)| a - b).collect()
    }

    pub fn project_field(&self, v: &ScalarField) -> Result<ScalarField> {
        v.expect_grid(&self.grid)?;
        ScalarField::new(self.grid, self.project(v.values()))
    }

    /// Projection of a sparse direction. Returns `None` when `d` misses the
    /// support of `H` entirely, in which case `P d = d` exactly.
    pub fn project_sparse(&self, d: &SparseVec, scratch: &mut ProjectionScratch) -> Option<SparseVec> {
        for (k, v) in d.iter() {
            for &(r, c) in self.column(k) {
                scratch.rows.add(r, c * v);
            }
        }
        if scratch.rows.is_empty() {
            return None;
        }
        let hd = scratch.rows.drain();
        let mut hd_dense_blocks: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for (r, v) in hd.iter() {
            let (b, pos) = self.row_block[r];
            hd_dense_blocks.entry(b).or_insert_with(|| vec![0.0; self.blocks[b].rows.len()])[pos] = v;
        }
        for (k, v) in d.iter() {
            scratch.nodes.add(k, v);
        }
        for (b, mut rhs) in hd_dense_blocks {
            let block = &self.blocks[b];
            block.solve_in_place(&mut rhs);
            for (&r, &y) in block.rows.iter().zip(&rhs) {
                if y != 0.0 {
                    for (k, c) in self.rows[r].iter() {
                        scratch.nodes.add(k, -c * y);
                    }
                }
            }
        }
        Some(scratch.nodes.drain())
    }

    /// Sorted rows whose support meets the support of `d`.
    pub fn rows_touching(&self, d: &SparseVec) -> Vec<usize> {
        let mut rows: Vec<usize> = d.iter().flat_map(|(k, _)| self.column(k).iter().map(|&(r, _)| r)).collect();
        rows.sort_unstable();
        rows.dedup();
        rows
    }

    /// `‖H d‖_∞` for a sparse `d`.
    pub fn apply_sparse_max(&self, d: &SparseVec) -> f64 {
        let mut acc = vec![0.0; self.rows.len()];
        for (k, v) in d.iter() {
            for &(r, c) in self.column(k) {
                acc[r] += c * v;
            }
        }
        acc.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `(H T − g)_r`.
    pub fn row_residual(&self, r: usize, t: &[f64]) -> f64 {
        self.rows[r].iter().map(|(k, c)| c * t[k]).sum::<f64>() - self.rhs[r]
    }

    /// `max(1, ‖g‖_∞)`, the scale of relative violations.
    pub fn violation_scale(&self) -> f64 {
        self.rhs.iter().fold(1.0f64, |m, v| m.max(v.abs()))
    }

    /// `‖H T − g‖_∞ / max(1, ‖g‖_∞)`.
    pub fn violation(&self, t: &[f64]) -> f64 {
        let worst = (0..self.rows.len()).map(|r| self.row_residual(r, t).abs()).fold(0.0, f64::max);
        worst / self.violation_scale()
    }

    /// Arrival times at the constrained points range over `[min, max]`.
    pub fn time_span(&self) -> (f64, f64) {
        self.rhs
            .iter()
            .zip(&self.counts)
            .map(|(g, &c)| g / c as f64)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| (lo.min(t), hi.max(t)))
    }
}

/// Builds the condensed constraint system for a list of perimeters.
///
/// One row per (perimeter, triangle) pair that received a point, ordered by
/// perimeter index and then triangle id.
pub fn build_constraints(grid: &Grid, perimeters: &[Perimeter]) -> Result<ConstraintSystem> {
    struct Accum {
        nodes: [usize; 3],
        weights: [f64; 3],
        count: usize,
        time_sum: f64,
    }
    let mut cells: BTreeMap<(usize, usize), Accum> = BTreeMap::new();
    for (p, perimeter) in perimeters.iter().enumerate() {
        for pt in perimeter.points() {
            let loc = locate_point(grid, pt.x, pt.y)?;
            let e = cells.entry((p, loc.triangle)).or_insert(Accum {
                nodes: loc.nodes,
                weights: [0.0; 3],
                count: 0,
                time_sum: 0.0,
            });
            for (w, lw) in e.weights.iter_mut().zip(loc.weights) {
                *w += lw;
            }
            e.count += 1;
            e.time_sum += pt.time;
        }
    }
    let mut rows = Vec::with_capacity(cells.len());
    let mut rhs = Vec::with_capacity(cells.len());
    let mut counts = Vec::with_capacity(cells.len());
    let mut labels = Vec::with_capacity(cells.len());
    for ((perimeter, triangle), a) in cells {
        rows.push(a.nodes.iter().copied().zip(a.weights).filter(|&(_, w)| w > 0.0).collect());
        rhs.push(a.time_sum);
        counts.push(a.count);
        labels.push(Some(RowLabel { perimeter, triangle }));
    }
    ConstraintSystem::assemble(*grid, rows, rhs, counts, labels)
}
