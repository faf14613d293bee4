//! Fractional powers of the Neumann Laplacian, diagonalized by the cosine
//! transform.
//!
//! The discrete operator `A` is the symmetric 5-point Laplacian with the
//! outside neighbors dropped at the boundary:
//! `(A v)_ij = Σ_nb (v_ij − v_nb) / h²`. Its eigenvectors are the DCT-II
//! modes `cos(πk(i + ½)/nx) cos(πl(j + ½)/ny)` with eigenvalues
//! `(2/dx²)(1 − cos(πk/nx)) + (2/dy²)(1 − cos(πl/ny))`, so `S = A^α` and its
//! pseudoinverse cost two 2-D cosine transforms each.

use std::sync::Arc;

use rustdct::{DctPlanner, TransformType2And3};

use crate::error::{Error, Result};
use crate::grid::Grid;

#[derive(Clone)]
pub struct SpectralOperator {
    grid: Grid,
    alpha: f64,
    /// `λ^α` per mode, stored like node values (mode `(k, l)` at `l * nx + k`).
    eig: Vec<f64>,
    dct_x: Arc<dyn TransformType2And3<f64>>,
    dct_y: Arc<dyn TransformType2And3<f64>>,
}

impl std::fmt::Debug for SpectralOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralOperator").field("grid", &self.grid).field("alpha", &self.alpha).finish()
    }
}

/// Eigenvalue of the 1-D Neumann second difference for mode `k` of `n`.
fn mode_eigenvalue(k: usize, n: usize, h: f64) -> f64 {
    let s = (std::f64::consts::PI * k as f64 / (2 * n) as f64).sin();
    4.0 * s * s / (h * h)
}

impl SpectralOperator {
    /// `S = A^α` for `α ≥ 1`.
    pub fn new(grid: Grid, alpha: f64) -> Result<Self> {
        Self::with_force(grid, alpha, false)
    }

    /// As [`SpectralOperator::new`]; `force` admits `0 < α < 1`.
    pub fn with_force(grid: Grid, alpha: f64, force: bool) -> Result<Self> {
        if !alpha.is_finite() || alpha <= 0.0 || (alpha < 1.0 && !force) {
            return Err(Error::InvalidParameter(format!("fractional exponent must be >= 1, got {alpha}")));
        }
        let mut planner = DctPlanner::new();
        let ex: Vec<f64> = (0..grid.nx).map(|k| mode_eigenvalue(k, grid.nx, grid.dx)).collect();
        let ey: Vec<f64> = (0..grid.ny).map(|l| mode_eigenvalue(l, grid.ny, grid.dy)).collect();
        let eig = (0..grid.len())
            .map(|m| {
                let (k, l) = grid.ij(m);
                if k == 0 && l == 0 {
                    0.0
                } else {
                    (ex[k] + ey[l]).powf(alpha)
                }
            })
            .collect();
        Ok(Self {
            grid,
            alpha,
            eig,
            dct_x: planner.plan_dct2(grid.nx),
            dct_y: planner.plan_dct2(grid.ny),
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `λ^α` of mode `(k, l)`.
    pub fn eigenvalue(&self, k: usize, l: usize) -> f64 {
        self.eig[self.grid.index(k, l)]
    }

    /// `S v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.filter(v, |lam| lam)
    }

    /// `S⁺ v`: inverse on the complement of the constants, zero on them.
    pub fn apply_pinv(&self, v: &[f64]) -> Vec<f64> {
        self.filter(v, |lam| if lam > 0.0 { 1.0 / lam } else { 0.0 })
    }

    fn filter(&self, v: &[f64], gain: impl Fn(f64) -> f64) -> Vec<f64> {
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        assert_eq!(v.len(), nx * ny, "field does not match operator grid");
        let mut buf = v.to_vec();
        let mut col = vec![0.0; ny];
        for row in buf.chunks_mut(nx) {
            self.dct_x.process_dct2(row);
        }
        for i in 0..nx {
            for j in 0..ny {
                col[j] = buf[j * nx + i];
            }
            self.dct_y.process_dct2(&mut col);
            for j in 0..ny {
                buf[j * nx + i] = col[j];
            }
        }
        // DCT-III after DCT-II scales by n/2 per axis
        let norm = 4.0 / (nx * ny) as f64;
        for (c, &lam) in buf.iter_mut().zip(&self.eig) {
            *c *= gain(lam) * norm;
        }
        for i in 0..nx {
            for j in 0..ny {
                col[j] = buf[j * nx + i];
            }
            self.dct_y.process_dct3(&mut col);
            for j in 0..ny {
                buf[j * nx + i] = col[j];
            }
        }
        for row in buf.chunks_mut(nx) {
            self.dct_x.process_dct3(row);
        }
        buf
    }
}

/// Removes the mean (projection onto the complement of the constants).
pub fn remove_mean(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    for x in v.iter_mut() {
        *x -= mean;
    }
}
