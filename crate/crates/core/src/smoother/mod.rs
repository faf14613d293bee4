//! Fractional-Laplacian initializer.
//!
//! Minimizes `½⟨S T, T⟩` subject to `H T = g`, with `S = A^α`. Writing
//! `T = u₀ + v` with the minimum-norm feasible point `u₀`, the constrained
//! problem becomes the symmetric system
//!
//! ```text
//! P (S P v − f₀) + ρ (I − P) v = 0,    f₀ = −S u₀
//! ```
//!
//! solved by conjugate gradients preconditioned with
//! `M r = P P_Z S⁺ P_Z P r`, where `P_Z` removes the mean. The result is
//! `T = u₀ + P v`, so the constraints hold to rounding no matter how loosely
//! the linear system is solved.

mod pcg;
mod spectral;

pub use pcg::{pcg, PcgResult};
pub use spectral::{remove_mean, SpectralOperator};

use crate::constraint::ConstraintSystem;
use crate::error::{Error, Result};
use crate::grid::ScalarField;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmootherConfig {
    pub alpha: f64,
    pub rho: f64,
    pub pcg_tol: f64,
    pub pcg_maxit: usize,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        Self { alpha: 1.4, rho: 1.0, pcg_tol: 1e-4, pcg_maxit: 200 }
    }
}

impl SmootherConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha > 0.0 && self.rho > 0.0 && self.pcg_tol > 0.0 && self.pcg_maxit > 0;
        if !ok || !self.alpha.is_finite() || !self.rho.is_finite() {
            return Err(Error::InvalidParameter(format!("smoother settings must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// The projected system and its preconditioner for a given constraint set.
pub struct ProjectedSystem<'a> {
    pub constraints: &'a ConstraintSystem,
    pub operator: &'a SpectralOperator,
    pub rho: f64,
    /// `u₀`.
    pub feasible: Vec<f64>,
}

impl<'a> ProjectedSystem<'a> {
    pub fn new(constraints: &'a ConstraintSystem, operator: &'a SpectralOperator, rho: f64) -> Result<Self> {
        let grid = constraints.grid();
        if grid.nx != operator.grid().nx || grid.ny != operator.grid().ny {
            return Err(Error::ShapeMismatch { expected: grid.len(), actual: operator.grid().len() });
        }
        let feasible = constraints.feasible_point().into_values();
        Ok(Self { constraints, operator, rho, feasible })
    }

    /// `L v = P S P v + ρ (I − P) v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let pv = self.constraints.project(v);
        let spv = self.operator.apply(&pv);
        let pspv = self.constraints.project(&spv);
        pspv.iter().zip(v.iter().zip(&pv)).map(|(a, (x, px))| a + self.rho * (x - px)).collect()
    }

    /// `M r = P P_Z S⁺ P_Z P r`.
    pub fn precondition(&self, r: &[f64]) -> Vec<f64> {
        let mut t = self.constraints.project(r);
        remove_mean(&mut t);
        let mut t = self.operator.apply_pinv(&t);
        remove_mean(&mut t);
        self.constraints.project(&t)
    }

    /// Right-hand side `P f₀ = −P S u₀`.
    pub fn rhs(&self) -> Vec<f64> {
        let su0: Vec<f64> = self.operator.apply(&self.feasible).iter().map(|v| -v).collect();
        self.constraints.project(&su0)
    }

    /// `T = u₀ + P v`.
    pub fn recover(&self, v: &[f64]) -> Vec<f64> {
        self.constraints.project(v).iter().zip(&self.feasible).map(|(a, b)| a + b).collect()
    }
}

#[derive(Debug, Clone)]
pub struct InitialSolution {
    pub field: ScalarField,
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<f64>,
}

/// Quadratic initializer: the constrained minimizer of the fractional
/// seminorm, solved to `cfg.pcg_tol`. A solve that hits `pcg_maxit` still
/// returns its (feasible) iterate with `converged == false`.
pub fn solve_initial(
    constraints: &ConstraintSystem,
    operator: &SpectralOperator,
    cfg: &SmootherConfig,
) -> Result<InitialSolution> {
    cfg.validate()?;
    let sys = ProjectedSystem::new(constraints, operator, cfg.rho)?;
    let rhs = sys.rhs();
    let res = pcg(|v| sys.apply(v), |r| sys.precondition(r), &rhs, cfg.pcg_tol, cfg.pcg_maxit)?;
    if !res.converged {
        log::warn!(
            "initializer stopped after {} iterations at relative residual {:e}",
            res.iterations,
            res.history.last().copied().unwrap_or(f64::NAN)
        );
    }
    let field = ScalarField::new(*constraints.grid(), sys.recover(&res.x))?;
    Ok(InitialSolution { field, iterations: res.iterations, converged: res.converged, history: res.history })
}

/// `|T(node) − mean of its 4-neighbors|`, the sharpness of a point funnel.
pub fn funnel_metric(t: &ScalarField, node: usize) -> f64 {
    let g = t.grid();
    let v = t.values();
    let (mut sum, mut n) = (0.0, 0usize);
    g.for_each_neighbor(node, |k| {
        sum += v[k];
        n += 1;
    });
    (v[node] - sum / n as f64).abs()
}
