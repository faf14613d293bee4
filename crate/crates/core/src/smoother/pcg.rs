//! Preconditioned conjugate gradients on slices.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct PcgResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `sqrt(⟨r, M r⟩ / ⟨r₀, M r₀⟩)` after every iteration, starting with 1.
    pub history: Vec<f64>,
    /// `‖r‖₂ / ‖r₀‖₂` after every iteration, starting with 1.
    pub residual_history: Vec<f64>,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = b` from a zero initial guess.
///
/// Stops when the relative preconditioned residual drops to `tol` or after
/// `maxit` iterations. Errors if a search direction has non-positive
/// curvature.
pub fn pcg<A, M>(mut op: A, mut precond: M, rhs: &[f64], tol: f64, maxit: usize) -> Result<PcgResult>
where
    A: FnMut(&[f64]) -> Vec<f64>,
    M: FnMut(&[f64]) -> Vec<f64>,
{
    let n = rhs.len();
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut z = precond(&r);
    let mut rz = dot(&r, &z);
    let r0 = dot(&r, &r).sqrt();
    let mut out = PcgResult { x: Vec::new(), iterations: 0, converged: false, history: vec![1.0], residual_history: vec![1.0] };
    if rz <= 0.0 || r0 == 0.0 {
        out.x = x;
        out.converged = true;
        return Ok(out);
    }
    let rz0 = rz;
    let mut p = z.clone();
    for it in 1..=maxit {
        let ap = op(&p);
        let curvature = dot(&p, &ap);
        if !(curvature > 0.0) {
            return Err(Error::Breakdown { iteration: it, curvature });
        }
        let step = rz / curvature;
        for ((xi, ri), (pi, api)) in x.iter_mut().zip(r.iter_mut()).zip(p.iter().zip(&ap)) {
            *xi += step * pi;
            *ri -= step * api;
        }
        z = precond(&r);
        let rz_new = dot(&r, &z);
        let rel = (rz_new.max(0.0) / rz0).sqrt();
        out.history.push(rel);
        out.residual_history.push(dot(&r, &r).sqrt() / r0);
        out.iterations = it;
        if rel <= tol {
            out.converged = true;
            break;
        }
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    out.x = x;
    Ok(out)
}
