//! Fire arrival time from perimeters, rate of spread and detections.
//!
//! The arrival time `T(x, y)` of a fire satisfies the eikonal equation
//! `‖∇T‖ R = 1` for the rate of spread `R`. Given perimeters with known
//! arrival times, [`smoother::solve_initial`] builds a smooth field that
//! honors them exactly, and [`optimizer::multiscale_fit`] then drives the
//! eikonal residual down while keeping the perimeter constraints.
//! [`detection`] scores arrival fields against satellite fire detections.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod constraint;
pub mod detection;
pub mod error;
pub mod grid;
pub mod objective;
pub mod optimizer;
pub mod smoother;
pub mod sparse;
pub mod spread;

pub use error::{Error, Result};
