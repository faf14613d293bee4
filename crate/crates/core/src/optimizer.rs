//! Multiscale constrained descent.
//!
//! Line searches run along tensor-product hat functions on a hierarchy of
//! coarse lattices, each projected onto the null space of `H` so the
//! perimeter constraints stay satisfied. Levels go from the coarsest step to
//! single nodes, and the whole pass is repeated for a number of cycles.

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use crate::constraint::{ConstraintSystem, ProjectionScratch};
use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};
use crate::objective::{IncrementalObjective, Objective, ObjectiveConfig};
use crate::sparse::SparseVec;
use crate::spread::RosModel;

/// Largest relative constraint violation tolerated during descent.
pub const VIOLATION_TOL: f64 = 1e-10;

/// Relative width at which the golden-section search stops.
pub const LINE_SEARCH_REL_WIDTH: f64 = 1e-3;

/// Directions whose projection shrinks below this fraction are skipped.
const PROJECTED_NORM_TOL: f64 = 1e-12;

/// A cost that can be probed along one sparse direction at a time.
///
/// `trial` must not change the committed state, and `commit` after moving
/// `t` by `step · d` must return exactly the value `trial` reported for
/// that step.
pub trait DescentObjective {
    /// Re-evaluates everything at `t` and returns the cost.
    fn reset(&mut self, t: &[f64]) -> f64;
    /// Cost at the committed state.
    fn value(&self) -> f64;
    fn set_direction(&mut self, d: &SparseVec);
    /// Cost at `t + step · d` for the current direction.
    fn trial(&mut self, t: &[f64], step: f64) -> f64;
    /// Accepts `t`, which must equal the committed state moved along `d`.
    fn commit(&mut self, t: &[f64]) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelSchedule {
    pub coarsest_step: usize,
    pub ratio: usize,
    /// Sweeps per level, coarsest first.
    pub sweeps: Vec<usize>,
    pub cycles: usize,
    /// Multiplier on the default line-search bracket.
    pub bracket_scale: f64,
}

impl Default for LevelSchedule {
    fn default() -> Self {
        Self::linear(32, 4)
    }
}

impl LevelSchedule {
    /// Ratio 2 from `coarsest_step` to 1 with sweeps `1, 2, ...` coarse to fine.
    pub fn linear(coarsest_step: usize, cycles: usize) -> Self {
        let levels = coarsest_step.max(1).ilog2() as usize + 1;
        Self { coarsest_step, ratio: 2, sweeps: (1..=levels).collect(), cycles, bracket_scale: 1.0 }
    }

    /// Mesh steps, coarsest first, ending at 1.
    pub fn steps(&self) -> Vec<usize> {
        let mut out = vec![self.coarsest_step];
        let mut s = self.coarsest_step;
        while s > 1 && self.ratio > 1 {
            s /= self.ratio;
            out.push(s);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.ratio < 2 {
            return Err(Error::InvalidParameter(format!("coarsening ratio must be >= 2, got {}", self.ratio)));
        }
        let mut s = self.coarsest_step;
        while s > 1 && s.is_multiple_of(self.ratio) {
            s /= self.ratio;
        }
        if self.coarsest_step == 0 || s != 1 {
            return Err(Error::InvalidParameter(format!(
                "coarsest step {} is not a power of {}",
                self.coarsest_step, self.ratio
            )));
        }
        let levels = self.steps().len();
        if self.sweeps.len() != levels {
            return Err(Error::InvalidParameter(format!("{levels} levels but {} sweep counts", self.sweeps.len())));
        }
        if self.sweeps.contains(&0) {
            return Err(Error::InvalidParameter("sweep counts must be positive".into()));
        }
        if !(self.bracket_scale > 0.0 && self.bracket_scale.is_finite()) {
            return Err(Error::InvalidParameter(format!("bracket scale must be positive, got {}", self.bracket_scale)));
        }
        Ok(())
    }
}

/// One line search of a fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchRecord {
    pub cycle: usize,
    /// Mesh step of the level.
    pub level: usize,
    /// Accepted step length; 0 when no improvement was found.
    pub step: f64,
    /// Cost after the search.
    pub objective: f64,
    /// Relative constraint violation after the search.
    pub violation: f64,
}

#[derive(Debug, Clone, Default)]
pub struct FitReport {
    pub initial_objective: f64,
    pub records: Vec<LineSearchRecord>,
    /// `(mesh step, line searches)` summed over cycles, coarsest first.
    pub level_counts: Vec<(usize, usize)>,
    pub final_violation: f64,
    pub max_violation: f64,
    pub wall_time: Duration,
}

impl FitReport {
    pub fn objective_history(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.objective).collect()
    }

    pub fn final_objective(&self) -> f64 {
        self.records.last().map_or(self.initial_objective, |r| r.objective)
    }

    /// Writes `iteration,level,step,objective`, one row per line search.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "iteration,level,step,objective")?;
        for (i, r) in self.records.iter().enumerate() {
            writeln!(w, "{},{},{:.16e},{:.16e}", i + 1, r.level, r.step, r.objective)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Positions of the coarse lattice along an axis of `n` nodes: multiples of
/// `step`, plus the last node.
pub fn lattice_positions(n: usize, step: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..n).step_by(step.max(1)).collect();
    if out.last() != Some(&(n - 1)) {
        out.push(n - 1);
    }
    out
}

fn hat(d: usize, step: usize) -> f64 {
    1.0 - d as f64 / step as f64
}

fn hat_direction(grid: &Grid, step: usize, i: usize, j: usize) -> SparseVec {
    let span = |a: usize, n: usize| (a.saturating_sub(step - 1), (a + step - 1).min(n - 1));
    let (i0, i1) = span(i, grid.nx);
    let (j0, j1) = span(j, grid.ny);
    let mut d = SparseVec::new();
    for jj in j0..=j1 {
        let wy = hat(jj.abs_diff(j), step);
        for ii in i0..=i1 {
            d.idx.push(grid.index(ii, jj));
            d.val.push(wy * hat(ii.abs_diff(i), step));
        }
    }
    d
}

fn check_anchor(grid: &Grid, step: usize, i: usize, j: usize) -> Result<()> {
    let on = |a: usize, n: usize| a < n && (a.is_multiple_of(step) || a == n - 1);
    if step == 0 || !on(i, grid.nx) || !on(j, grid.ny) {
        return Err(Error::OffLattice { i, j, step });
    }
    Ok(())
}

/// Tensor-product hat of half-width `step` centered at lattice node `(i, j)`.
pub fn coarse_basis(grid: &Grid, step: usize, i: usize, j: usize) -> Result<ScalarField> {
    check_anchor(grid, step, i, j)?;
    ScalarField::new(*grid, hat_direction(grid, step, i, j).to_dense(grid.len()))
}

/// Golden-section search for the minimum of `f` over `[−bracket, bracket]`.
///
/// Returns the best evaluated `(step, f(step))` if it is strictly below
/// `f0 = f(0)`, otherwise `(0, f0)`.
pub fn line_search(mut f: impl FnMut(f64) -> f64, f0: f64, bracket: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let tol = LINE_SEARCH_REL_WIDTH * 2.0 * bracket;
    let (mut a, mut b) = (-bracket, bracket);
    let mut best = (0.0, f0);
    let mut probe = |s: f64, best: &mut (f64, f64)| {
        let v = f(s);
        if v < best.1 {
            *best = (s, v);
        }
        v
    };
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = probe(c, &mut best);
    let mut fd = probe(d, &mut best);
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = probe(c, &mut best);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = probe(d, &mut best);
        }
    }
    best
}

/// Per-level line-search bracket: `(t_max − t_min) · step / extent`,
/// scaled, and at least one time unit.
pub fn level_bracket(c: &ConstraintSystem, step: usize, scale: f64) -> f64 {
    let (lo, hi) = c.time_span();
    let g = c.grid();
    let extent = (g.nx.max(g.ny) - 1).max(1) as f64;
    let span = if hi > lo { hi - lo } else { 0.0 };
    (scale * span * step as f64 / extent).max(1.0)
}

/// Working state of a descent: projection buffers and the constraint
/// residual per row, refreshed only where directions touch the support of `H`.
struct Descent<'c> {
    c: &'c ConstraintSystem,
    scratch: ProjectionScratch,
    row_resid: Vec<f64>,
    scale: f64,
    violation: f64,
    max_violation: f64,
}

impl<'c> Descent<'c> {
    fn new(c: &'c ConstraintSystem, t: &[f64]) -> Result<Self> {
        let row_resid: Vec<f64> = (0..c.num_rows()).map(|r| c.row_residual(r, t)).collect();
        let scale = c.violation_scale();
        let violation = row_resid.iter().fold(0.0f64, |m, v| m.max(v.abs())) / scale;
        if violation > VIOLATION_TOL {
            return Err(Error::ConstraintDrift { violation });
        }
        Ok(Self { c, scratch: ProjectionScratch::new(c), row_resid, scale, violation, max_violation: violation })
    }

    fn sweep<O: DescentObjective>(
        &mut self,
        t: &mut [f64],
        step: usize,
        cycle: usize,
        bracket: f64,
        obj: &mut O,
        records: &mut Vec<LineSearchRecord>,
    ) -> Result<()> {
        let grid = *self.c.grid();
        for &j in &lattice_positions(grid.ny, step) {
            for &i in &lattice_positions(grid.nx, step) {
                let d = hat_direction(&grid, step, i, j);
                let (dir, touched) = match self.c.project_sparse(&d, &mut self.scratch) {
                    None => (d, false),
                    Some(pd) => {
                        if pd.max_abs() < PROJECTED_NORM_TOL * d.max_abs() {
                            continue;
                        }
                        let hd = self.c.apply_sparse_max(&pd);
                        if hd > VIOLATION_TOL * pd.max_abs() {
                            return Err(Error::ConstraintDrift { violation: hd / pd.max_abs() });
                        }
                        (pd, true)
                    }
                };
                obj.set_direction(&dir);
                let f0 = obj.value();
                let (s, _) = line_search(|s| obj.trial(t, s), f0, bracket);
                let value = if s != 0.0 {
                    for (k, v) in dir.iter() {
                        t[k] += s * v;
                    }
                    let value = obj.commit(t);
                    if touched {
                        self.refresh_rows(&dir, t)?;
                    }
                    value
                } else {
                    f0
                };
                records.push(LineSearchRecord { cycle, level: step, step: s, objective: value, violation: self.violation });
            }
        }
        Ok(())
    }

    fn refresh_rows(&mut self, dir: &SparseVec, t: &[f64]) -> Result<()> {
        for r in self.c.rows_touching(dir) {
            self.row_resid[r] = self.c.row_residual(r, t);
        }
        self.violation = self.row_resid.iter().fold(0.0f64, |m, v| m.max(v.abs())) / self.scale;
        self.max_violation = self.max_violation.max(self.violation);
        if self.violation > VIOLATION_TOL {
            return Err(Error::ConstraintDrift { violation: self.violation });
        }
        Ok(())
    }
}

/// One pass over all anchors of the lattice with mesh step `step`, in
/// row-major order. Returns one record per line search.
pub fn sweep<O: DescentObjective>(
    t: &mut ScalarField,
    step: usize,
    c: &ConstraintSystem,
    obj: &mut O,
    bracket: f64,
) -> Result<Vec<LineSearchRecord>> {
    t.expect_grid(c.grid())?;
    if step == 0 {
        return Err(Error::InvalidParameter("mesh step must be positive".into()));
    }
    let mut state = Descent::new(c, t.values())?;
    obj.reset(t.values());
    let mut records = Vec::new();
    state.sweep(t.values_mut(), step, 0, bracket, obj, &mut records)?;
    Ok(records)
}

/// Runs the schedule with an arbitrary descent objective.
pub fn multiscale_descent<O: DescentObjective>(
    t0: &ScalarField,
    c: &ConstraintSystem,
    obj: &mut O,
    sched: &LevelSchedule,
) -> Result<(ScalarField, FitReport)> {
    sched.validate()?;
    t0.expect_grid(c.grid())?;
    let start = Instant::now();
    let mut t = t0.clone();
    let mut state = Descent::new(c, t.values())?;
    let steps = sched.steps();
    let mut report = FitReport {
        initial_objective: obj.reset(t.values()),
        level_counts: steps.iter().map(|&s| (s, 0)).collect(),
        ..Default::default()
    };
    for cycle in 0..sched.cycles {
        for (level, (&step, &sweeps)) in steps.iter().zip(&sched.sweeps).enumerate() {
            let bracket = level_bracket(c, step, sched.bracket_scale);
            let before = report.records.len();
            for _ in 0..sweeps {
                state.sweep(t.values_mut(), step, cycle, bracket, obj, &mut report.records)?;
            }
            report.level_counts[level].1 += report.records.len() - before;
            log::debug!(
                "cycle {cycle} step {step}: {} line searches, J = {:.6e}",
                report.records.len() - before,
                obj.value()
            );
        }
        log::info!("cycle {cycle} done, J = {:.6e}", obj.value());
    }
    report.final_violation = c.violation(t.values());
    report.max_violation = state.max_violation.max(report.final_violation);
    report.wall_time = start.elapsed();
    Ok((t, report))
}

/// Minimizes the residual cost from a feasible `t0` under the schedule.
pub fn multiscale_fit(
    t0: &ScalarField,
    c: &ConstraintSystem,
    ros: &RosModel,
    cfg: &ObjectiveConfig,
    sched: &LevelSchedule,
) -> Result<(ScalarField, FitReport)> {
    t0.expect_grid(ros.grid())?;
    let obj = Objective::new(ros, cfg, &c.constrained_nodes())?;
    let mut inc = IncrementalObjective::new(obj, t0.values());
    multiscale_descent(t0, c, &mut inc, sched)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraint::{build_constraints, Perimeter};

    #[test]
    fn default_schedule() {
        let s = LevelSchedule::default();
        assert_eq!(s.steps(), vec![32, 16, 8, 4, 2, 1]);
        assert_eq!(s.sweeps, vec![1, 2, 3, 4, 5, 6]);
        assert_eq!(s.cycles, 4);
        s.validate().unwrap();
        assert!(LevelSchedule { coarsest_step: 24, ..LevelSchedule::default() }.validate().is_err());
        assert!(LevelSchedule { sweeps: vec![1, 2], ..LevelSchedule::default() }.validate().is_err());
        assert_eq!(LevelSchedule::linear(1, 1).steps(), vec![1]);
    }

    #[test]
    fn lattice_includes_the_last_node() {
        assert_eq!(lattice_positions(100, 32), vec![0, 32, 64, 96, 99]);
        assert_eq!(lattice_positions(9, 4), vec![0, 4, 8]);
        assert_eq!(lattice_positions(5, 1), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn step_one_is_an_indicator() {
        let g = Grid::unit(6, 5).unwrap();
        let b = coarse_basis(&g, 1, 2, 3).unwrap();
        for k in 0..g.len() {
            assert_eq!(b.values()[k], if k == g.index(2, 3) { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn step_two_hat() {
        let g = Grid::unit(9, 9).unwrap();
        let b = coarse_basis(&g, 2, 4, 4).unwrap();
        assert_eq!(b.at(4, 4), 1.0);
        assert_eq!(b.at(3, 3), 0.25);
        assert_eq!(b.at(5, 4), 0.5);
        assert_eq!(b.values().iter().filter(|v| **v != 0.0).count(), 9);
    }

    #[test]
    fn hat_matches_tensor_evaluation_and_clips() {
        let g = Grid::unit(100, 100).unwrap();
        let b = coarse_basis(&g, 16, 16, 80).unwrap();
        let tensor = |i: usize, j: usize| {
            let f = |d: f64| (1.0 - d.abs() / 16.0).max(0.0);
            f(i as f64 - 16.0) * f(j as f64 - 80.0)
        };
        for j in 0..100 {
            for i in 0..100 {
                assert!((b.at(i, j) - tensor(i, j)).abs() < 1e-15);
            }
        }
        assert_eq!(b.values().iter().filter(|v| **v != 0.0).count(), 31 * 31);
        let edge = coarse_basis(&g, 16, 0, 0).unwrap();
        assert_eq!(edge.values().iter().filter(|v| **v != 0.0).count(), 16 * 16);
    }

    #[test]
    fn off_lattice_anchor_is_rejected() {
        let g = Grid::unit(100, 100).unwrap();
        assert!(matches!(coarse_basis(&g, 16, 5, 0), Err(Error::OffLattice { .. })));
        assert!(coarse_basis(&g, 16, 99, 96).is_ok());
    }

    #[test]
    fn golden_section_finds_the_quadratic_minimum() {
        let (s, v) = line_search(|s| (s - 1.0) * (s - 1.0), 1.0, 4.0);
        assert!((s - 1.0).abs() <= 1e-3 * 4.0);
        assert!(v < 1e-5);
    }

    #[test]
    fn no_improvement_returns_zero() {
        assert_eq!(line_search(|_| 2.0, 2.0, 3.0), (0.0, 2.0));
        assert_eq!(line_search(|s| s * s, 0.0, 3.0), (0.0, 0.0));
    }

    /// Minimal quadratic objective `Σ (t − target)²` for exercising the driver.
    struct Quadratic {
        target: Vec<f64>,
        dir: SparseVec,
        current: f64,
    }

    impl Quadratic {
        fn eval(&self, t: &[f64]) -> f64 {
            t.iter().zip(&self.target).map(|(a, b)| (a - b) * (a - b)).sum()
        }
    }

    impl DescentObjective for Quadratic {
        fn reset(&mut self, t: &[f64]) -> f64 {
            self.current = self.eval(t);
            self.current
        }
        fn value(&self) -> f64 {
            self.current
        }
        fn set_direction(&mut self, d: &SparseVec) {
            self.dir = d.clone();
        }
        fn trial(&mut self, t: &[f64], step: f64) -> f64 {
            let mut moved = t.to_vec();
            for (k, v) in self.dir.iter() {
                moved[k] += step * v;
            }
            self.eval(&moved)
        }
        fn commit(&mut self, t: &[f64]) -> f64 {
            self.reset(t)
        }
    }

    #[test]
    fn fully_constrained_grid_is_left_unchanged() {
        let g = Grid::unit(3, 3).unwrap();
        let rows = (0..9).map(|k| vec![(k, 1.0)]).collect();
        let c = ConstraintSystem::from_rows(g, rows, vec![2.0; 9]).unwrap();
        let t0 = c.feasible_point();
        let mut q = Quadratic { target: vec![0.0; 9], dir: SparseVec::new(), current: 0.0 };
        let mut t = t0.clone();
        let recs = sweep(&mut t, 1, &c, &mut q, 1.0).unwrap();
        assert!(recs.is_empty());
        assert_eq!(t, t0);
    }

    #[test]
    fn projected_descent_keeps_constraints() {
        let g = Grid::unit(12, 10).unwrap();
        let circle: Vec<(f64, f64)> =
            (0..24).map(|k| (k as f64 * std::f64::consts::TAU / 24.0).sin_cos()).map(|(s, c)| (5.5 + 3.3 * c, 4.5 + 3.3 * s)).collect();
        let peris = [Perimeter::ignition(5.5, 4.5, 0.0).unwrap(), Perimeter::isochrone(&circle, 3.0).unwrap()];
        let c = build_constraints(&g, &peris).unwrap();
        let t0 = c.feasible_point();
        let target: Vec<f64> = (0..g.len()).map(|k| (k as f64 * 0.37).cos() * 5.0).collect();
        let mut q = Quadratic { target, dir: SparseVec::new(), current: 0.0 };
        let sched = LevelSchedule::linear(4, 2);
        let (t, report) = multiscale_descent(&t0, &c, &mut q, &sched).unwrap();
        let hist = report.objective_history();
        assert!(hist.windows(2).all(|w| w[1] <= w[0]));
        assert!(report.final_objective() < report.initial_objective);
        assert!(report.max_violation <= VIOLATION_TOL);
        assert!(c.violation(t.values()) <= VIOLATION_TOL);
        assert_eq!(report.level_counts.iter().map(|l| l.1).sum::<usize>(), report.records.len());
        assert!(report.records.iter().all(|r| r.violation <= VIOLATION_TOL));
    }

    #[test]
    fn zero_cycles_is_identity() {
        let g = Grid::unit(8, 8).unwrap();
        let c = build_constraints(&g, &[Perimeter::ignition(3.0, 3.0, 0.0).unwrap()]).unwrap();
        let ros = RosModel::uniform(g, 1.0).unwrap();
        let t0 = c.feasible_point();
        let sched = LevelSchedule { cycles: 0, ..LevelSchedule::linear(4, 0) };
        let (t, report) = multiscale_fit(&t0, &c, &ros, &ObjectiveConfig::default(), &sched).unwrap();
        assert_eq!(t, t0);
        assert!(report.records.is_empty());
    }

    #[test]
    fn infeasible_start_is_rejected() {
        let g = Grid::unit(8, 8).unwrap();
        let c = build_constraints(&g, &[Perimeter::ignition(3.0, 3.0, 5.0).unwrap()]).unwrap();
        let ros = RosModel::uniform(g, 1.0).unwrap();
        let err = multiscale_fit(&ScalarField::zeros(g), &c, &ros, &ObjectiveConfig::default(), &LevelSchedule::linear(2, 1));
        assert!(matches!(err, Err(Error::ConstraintDrift { .. })));
    }
}
