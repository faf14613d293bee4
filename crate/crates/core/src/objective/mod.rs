//! The minimal-residual cost and the fast-marching forward model.
//!
//! ```text
//! J(T) = (Σ_nodes |f(‖∇T‖², R²)|^p · dx·dy)^{1/p} + w · Σ_pits (min_nb T − T)²
//! ```
//!
//! where `‖∇T‖` is the Godunov upwind norm, `R` is evaluated at the node
//! with `t = T(node)`, and the penalty sums over strict 4-neighbor local
//! minima that are not exempt (constrained or ignition nodes).

mod fast_march;
mod sum_tree;

pub use fast_march::fast_march;
pub(crate) use sum_tree::SumTree;

use crate::error::{Error, Result};
use crate::grid::upwind::{godunov_gradient, is_strict_local_min};
use crate::grid::{Grid, ScalarField};
use crate::optimizer::DescentObjective;
use crate::sparse::SparseVec;
use crate::spread::RosModel;

/// The function `f(x, y)` whose zero set is `xy = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResidualForm {
    /// `1 − x y`
    #[default]
    Product,
    /// `x − 1/y`
    Difference,
}

impl ResidualForm {
    #[inline]
    pub fn eval(self, grad_sq: f64, rate_sq: f64) -> f64 {
        match self {
            ResidualForm::Product => 1.0 - grad_sq * rate_sq,
            ResidualForm::Difference => grad_sq - 1.0 / rate_sq,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PenaltyWeight {
    /// Ten times the domain average of `1/R²`.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig {
    pub form: ResidualForm,
    pub p: f64,
    pub penalty_weight: PenaltyWeight,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self { form: ResidualForm::Product, p: 2.0, penalty_weight: PenaltyWeight::Auto }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return Err(Error::InvalidParameter(format!("norm exponent must be >= 1, got {}", self.p)));
        }
        if let PenaltyWeight::Fixed(w) = self.penalty_weight {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidParameter(format!("penalty weight must be >= 0, got {w}")));
            }
        }
        Ok(())
    }

    pub fn resolved_penalty_weight(&self, ros: &RosModel) -> f64 {
        match self.penalty_weight {
            PenaltyWeight::Fixed(w) => w,
            PenaltyWeight::Auto => {
                let rates = ros.node_field(0.0);
                let mean = rates.values().iter().map(|r| 1.0 / (r * r)).sum::<f64>() / rates.values().len() as f64;
                10.0 * mean
            }
        }
    }
}

/// Residual and penalty totals of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveParts {
    /// `(Σ |f|^p dA)^{1/p}`
    pub residual_norm: f64,
    /// Unweighted penalty sum.
    pub penalty: f64,
    pub total: f64,
}

/// Node-local evaluator of the cost.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    grid: Grid,
    ros: &'a RosModel,
    form: ResidualForm,
    p: f64,
    weight: f64,
    area: f64,
    exempt: Vec<bool>,
    /// Node rates when they depend on neither time nor direction.
    rates: Option<Vec<f64>>,
}

impl<'a> Objective<'a> {
    pub fn new(ros: &'a RosModel, cfg: &ObjectiveConfig, exempt: &[usize]) -> Result<Self> {
        cfg.validate()?;
        let grid = *ros.grid();
        let mut mask = vec![false; grid.len()];
        for &k in exempt {
            if k >= grid.len() {
                return Err(Error::InvalidParameter(format!("exempt node {k} outside grid")));
            }
            mask[k] = true;
        }
        let rates = ros.is_static().then(|| ros.node_field(0.0).into_values());
        Ok(Self {
            grid,
            ros,
            form: cfg.form,
            p: cfg.p,
            weight: cfg.resolved_penalty_weight(ros),
            area: grid.cell_area(),
            exempt: mask,
            rates,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn penalty_weight(&self) -> f64 {
        self.weight
    }

    /// Residual `f(‖∇T‖², R²)` at node `k`.
    #[inline]
    fn residual_at<F: Fn(usize) -> f64>(&self, k: usize, value: &F) -> f64 {
        let (i, j) = self.grid.ij(k);
        let [gx, gy] = godunov_gradient(&self.grid, i, j, value);
        let g2 = gx * gx + gy * gy;
        let r = match &self.rates {
            Some(r) => r[k],
            None => {
                let n = g2.sqrt();
                let dir = (n > 0.0).then(|| [gx / n, gy / n]);
                self.ros.at_node(k, value(k), dir)
            }
        };
        self.form.eval(g2, r * r)
    }

    /// `(|f|^p dA, pit penalty)` at node `k`.
    #[inline]
    fn node_terms<F: Fn(usize) -> f64>(&self, k: usize, value: &F) -> (f64, f64) {
        let res = self.residual_at(k, value);
        let a = res.abs();
        let term = if self.p == 2.0 { a * a } else if self.p == 1.0 { a } else { a.powf(self.p) } * self.area;
        let pen = if self.exempt[k] {
            0.0
        } else {
            match is_strict_local_min(&self.grid, k, value) {
                Some(min_nb) => {
                    let d = min_nb - value(k);
                    d * d
                }
                None => 0.0,
            }
        };
        (term, pen)
    }

    #[inline]
    fn combine(&self, res_sum: f64, pen_sum: f64) -> f64 {
        let norm = if self.p == 2.0 { res_sum.sqrt() } else { res_sum.powf(1.0 / self.p) };
        norm + self.weight * pen_sum
    }

    fn leaves(&self, t: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let value = |k: usize| t[k];
        (0..self.grid.len()).map(|k| self.node_terms(k, &value)).unzip()
    }

    pub fn parts(&self, t: &[f64]) -> ObjectiveParts {
        let (res, pen) = self.leaves(t);
        let (rs, ps) = (SumTree::new(&res).total(), SumTree::new(&pen).total());
        let residual_norm = self.combine(rs, 0.0);
        ObjectiveParts { residual_norm, penalty: ps, total: self.combine(rs, ps) }
    }

    pub fn evaluate(&self, t: &[f64]) -> f64 {
        self.parts(t).total
    }

    pub fn residual_field(&self, t: &[f64]) -> Vec<f64> {
        let value = |k: usize| t[k];
        (0..self.grid.len()).map(|k| self.residual_at(k, &value)).collect()
    }
}

/// Per-node residual `f(‖∇T‖², R²)`.
pub fn residual_field(t: &ScalarField, ros: &RosModel, cfg: &ObjectiveConfig) -> Result<ScalarField> {
    t.expect_grid(ros.grid())?;
    let obj = Objective::new(ros, cfg, &[])?;
    ScalarField::new(*t.grid(), obj.residual_field(t.values()))
}

/// The cost `J(T)`; nodes in `exempt` never pay the pit penalty.
pub fn objective(t: &ScalarField, ros: &RosModel, cfg: &ObjectiveConfig, exempt: &[usize]) -> Result<f64> {
    t.expect_grid(ros.grid())?;
    Ok(Objective::new(ros, cfg, exempt)?.evaluate(t.values()))
}

/// Incremental evaluator for line searches along sparse directions.
///
/// Residual and penalty leaves are kept in pairwise-sum trees; a trial step
/// only recomputes the nodes within one cell of the direction's support, and
/// the resulting value is bit-identical to a full evaluation.
#[derive(Debug, Clone)]
pub struct IncrementalObjective<'a> {
    obj: Objective<'a>,
    res_tree: SumTree,
    pen_tree: SumTree,
    current: f64,
    dir: Vec<f64>,
    dir_support: Vec<usize>,
    affected: Vec<usize>,
    mark: Vec<bool>,
    new_res: Vec<f64>,
    new_pen: Vec<f64>,
    old_res: Vec<f64>,
    old_pen: Vec<f64>,
}

impl<'a> IncrementalObjective<'a> {
    pub fn new(obj: Objective<'a>, t: &[f64]) -> Self {
        let n = obj.grid.len();
        let (res, pen) = obj.leaves(t);
        let res_tree = SumTree::new(&res);
        let pen_tree = SumTree::new(&pen);
        let current = obj.combine(res_tree.total(), pen_tree.total());
        Self {
            obj,
            res_tree,
            pen_tree,
            current,
            dir: vec![0.0; n],
            dir_support: Vec::new(),
            affected: Vec::new(),
            mark: vec![false; n],
            new_res: Vec::new(),
            new_pen: Vec::new(),
            old_res: Vec::new(),
            old_pen: Vec::new(),
        }
    }

    pub fn objective(&self) -> &Objective<'a> {
        &self.obj
    }

    pub fn current(&self) -> f64 {
        self.current
    }

    /// Nodes whose terms change when the direction's support moves.
    pub fn affected(&self) -> &[usize] {
        &self.affected
    }

    fn compute_affected(&mut self, t: &[f64], step: f64) {
        let dir = &self.dir;
        let value = |k: usize| t[k] + step * dir[k];
        self.new_res.clear();
        self.new_pen.clear();
        for &k in &self.affected {
            let (r, p) = self.obj.node_terms(k, &value);
            self.new_res.push(r);
            self.new_pen.push(p);
        }
    }
}

impl DescentObjective for IncrementalObjective<'_> {
    fn reset(&mut self, t: &[f64]) -> f64 {
        let (res, pen) = self.obj.leaves(t);
        self.res_tree = SumTree::new(&res);
        self.pen_tree = SumTree::new(&pen);
        self.current = self.obj.combine(self.res_tree.total(), self.pen_tree.total());
        self.current
    }

    fn value(&self) -> f64 {
        self.current
    }

    fn set_direction(&mut self, d: &SparseVec) {
        for &k in &self.dir_support {
            self.dir[k] = 0.0;
        }
        self.dir_support.clear();
        self.affected.clear();
        let grid = self.obj.grid;
        for (k, v) in d.iter() {
            self.dir[k] = v;
            self.dir_support.push(k);
            let mark = &mut self.mark;
            let affected = &mut self.affected;
            let mut visit = |n: usize| {
                if !mark[n] {
                    mark[n] = true;
                    affected.push(n);
                }
            };
            visit(k);
            grid.for_each_neighbor(k, visit);
        }
        self.affected.sort_unstable();
        for &k in &self.affected {
            self.mark[k] = false;
        }
    }

    fn trial(&mut self, t: &[f64], step: f64) -> f64 {
        if step == 0.0 {
            return self.current;
        }
        self.compute_affected(t, step);
        self.old_res.clear();
        self.old_pen.clear();
        for &k in &self.affected {
            self.old_res.push(self.res_tree.leaf(k));
            self.old_pen.push(self.pen_tree.leaf(k));
        }
        self.res_tree.update_sorted(&self.affected, &self.new_res);
        self.pen_tree.update_sorted(&self.affected, &self.new_pen);
        let j = self.obj.combine(self.res_tree.total(), self.pen_tree.total());
        self.res_tree.update_sorted(&self.affected, &self.old_res);
        self.pen_tree.update_sorted(&self.affected, &self.old_pen);
        j
    }

    fn commit(&mut self, t: &[f64]) -> f64 {
        self.compute_affected(t, 0.0);
        self.res_tree.update_sorted(&self.affected, &self.new_res);
        self.pen_tree.update_sorted(&self.affected, &self.new_pen);
        self.current = self.obj.combine(self.res_tree.total(), self.pen_tree.total());
        self.current
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spread::RosModel;

    fn unit(n: usize) -> Grid {
        Grid::unit(n, n).unwrap()
    }

    #[test]
    fn constant_field_residual_is_one() {
        let g = unit(10);
        let ros = RosModel::uniform(g, 1.0).unwrap();
        let r = residual_field(&ScalarField::constant(g, 3.0), &ros, &ObjectiveConfig::default()).unwrap();
        assert!(r.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn forms_vanish_on_the_eikonal_root() {
        assert_eq!(ResidualForm::Product.eval(4.0, 0.25), 0.0);
        assert_eq!(ResidualForm::Difference.eval(4.0, 0.25), 0.0);
        assert!(ResidualForm::Product.eval(1.0, 2.0) < 0.0);
        assert!(ResidualForm::Difference.eval(1.0, 2.0) > 0.0);
    }

    #[test]
    fn constant_field_objective_on_paper_grid() {
        let g = unit(100);
        let ros = RosModel::uniform(g, 1.0).unwrap();
        let j = objective(&ScalarField::constant(g, 7.0), &ros, &ObjectiveConfig::default(), &[]).unwrap();
        assert!((j - 100.0).abs() < 1e-12);
    }

    #[test]
    fn pit_penalty_is_weight_times_depth_squared() {
        let g = unit(7);
        let ros = RosModel::uniform(g, 1.0).unwrap();
        let cfg = ObjectiveConfig { penalty_weight: PenaltyWeight::Fixed(3.0), ..Default::default() };
        let mut t = ScalarField::constant(g, 5.0);
        t.set(3, 3, 3.0);
        let obj = Objective::new(&ros, &cfg, &[]).unwrap();
        let parts = obj.parts(t.values());
        assert_eq!(parts.penalty, 4.0);
        assert!((parts.total - parts.residual_norm - 12.0).abs() < 1e-12);
        // exempting the pit removes the penalty
        let obj = Objective::new(&ros, &cfg, &[g.index(3, 3)]).unwrap();
        assert_eq!(obj.parts(t.values()).penalty, 0.0);
    }

    #[test]
    fn auto_penalty_weight() {
        let g = unit(5);
        let ros = RosModel::uniform(g, 0.5).unwrap();
        assert!((ObjectiveConfig::default().resolved_penalty_weight(&ros) - 40.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_config() {
        let g = unit(5);
        let ros = RosModel::uniform(g, 1.0).unwrap();
        let cfg = ObjectiveConfig { p: 0.5, ..Default::default() };
        assert!(Objective::new(&ros, &cfg, &[]).is_err());
        let cfg = ObjectiveConfig { penalty_weight: PenaltyWeight::Fixed(-1.0), ..Default::default() };
        assert!(Objective::new(&ros, &cfg, &[]).is_err());
    }

    #[test]
    fn incremental_matches_full_evaluation_bitwise() {
        let g = Grid::new(13, 11, 1.0, 0.5, 0.0, 0.0).unwrap();
        let ros = RosModel::uniform(g, 0.8).unwrap();
        for p in [1.0, 2.0, 3.0] {
            let cfg = ObjectiveConfig { p, ..Default::default() };
            let obj = Objective::new(&ros, &cfg, &[0]).unwrap();
            let mut t: Vec<f64> = (0..g.len()).map(|k| ((k * 37 % 17) as f64).sin() * 3.0 + k as f64 * 0.1).collect();
            let mut inc = IncrementalObjective::new(obj.clone(), &t);
            assert_eq!(inc.value().to_bits(), obj.evaluate(&t).to_bits());
            let d = SparseVec { idx: vec![3, 14, 15, 60, 142], val: vec![1.0, -0.5, 0.25, 2.0, 1.0] };
            inc.set_direction(&d);
            for step in [0.3, -1.7, 4.0] {
                let mut moved = t.clone();
                for (k, v) in d.iter() {
                    moved[k] += step * v;
                }
                assert_eq!(inc.trial(&t, step).to_bits(), obj.evaluate(&moved).to_bits());
            }
            for (k, v) in d.iter() {
                t[k] += 0.3 * v;
            }
            assert_eq!(inc.commit(&t).to_bits(), obj.evaluate(&t).to_bits());
        }
    }

    #[test]
    fn time_dependent_rates_are_read_at_the_arrival_time() {
        use crate::spread::{FieldStack, RosBackend, DEFAULT_R_MIN};
        let g = unit(4);
        let stack = FieldStack::new(
            vec![0.0, 10.0],
            vec![ScalarField::constant(g, 1.0), ScalarField::constant(g, 2.0)],
        )
        .unwrap();
        let ros = RosModel::new(g, RosBackend::Field(stack), DEFAULT_R_MIN).unwrap();
        // T = x/2 + 10: arrival after the last slice, R = 2, so ‖∇T‖ R = 1 away from the left edge
        let t = ScalarField::from_fn(g, |x, _| 0.5 * x + 10.0);
        let r = residual_field(&t, &ros, &ObjectiveConfig::default()).unwrap();
        assert!(r.at(2, 1).abs() < 1e-14);
    }
}
