//! Rate-of-spread models.
//!
//! A [`RosModel`] evaluates the normal spread rate `R(x, y, t, direction)`.
//! Every backend is floored at `r_min > 0` because the residual uses `1/R`.

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};

pub const DEFAULT_R_MIN: f64 = 1e-6;

/// Base rate and the wind and slope enhancement factors at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RothermelInputs {
    pub r0: f64,
    pub phi_w: f64,
    pub phi_s: f64,
}

/// `R = R₀ (1 + φ_w + φ_s)`.
pub fn rothermel_rate(inputs: RothermelInputs) -> Result<f64> {
    let RothermelInputs { r0, phi_w, phi_s } = inputs;
    for (name, v) in [("r0", r0), ("phi_w", phi_w), ("phi_s", phi_s)] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::InvalidParameter(format!("{name} must be finite and non-negative, got {v}")));
        }
    }
    Ok(r0 * (1.0 + phi_w + phi_s))
}

/// Angular sectors around a center, each with its own spread rate.
///
/// Sector `k` covers angles `[boundaries[k], boundaries[k + 1])`, the last one
/// wrapping around to `boundaries[0] + 2π`.
#[derive(Debug, Clone, PartialEq)]
pub struct SectorSpec {
    pub center: [f64; 2],
    pub boundaries: Vec<f64>,
    pub rates: Vec<f64>,
}

impl SectorSpec {
    pub fn new(center: [f64; 2], boundaries: Vec<f64>, rates: Vec<f64>) -> Result<Self> {
        let spec = Self { center, boundaries, rates };
        spec.validate()?;
        Ok(spec)
    }

    /// `n` equal sectors starting at angle `start`.
    pub fn equal(center: [f64; 2], start: f64, rates: Vec<f64>) -> Result<Self> {
        let n = rates.len();
        let boundaries = (0..n).map(|k| start + TAU * k as f64 / n as f64).collect();
        Self::new(center, boundaries, rates)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.boundaries.len();
        if n == 0 || n != self.rates.len() {
            return Err(Error::InvalidParameter(format!(
                "sector spec needs matching non-empty boundary and rate lists, got {} and {}",
                n,
                self.rates.len()
            )));
        }
        if !self.center.iter().chain(&self.boundaries).all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter("sector spec values must be finite".into()));
        }
        if self.boundaries.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("sector boundaries must be strictly increasing".into()));
        }
        if self.boundaries[n - 1] - self.boundaries[0] >= TAU {
            return Err(Error::InvalidParameter("sector boundaries must span less than a full turn".into()));
        }
        if let Some(r) = self.rates.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
            return Err(Error::InvalidParameter(format!("sector rates must be positive, got {r}")));
        }
        Ok(())
    }

    /// Index of the sector containing the direction from the center to `(x, y)`.
    pub fn sector_of(&self, x: f64, y: f64) -> usize {
        let (dx, dy) = (x - self.center[0], y - self.center[1]);
        if dx == 0.0 && dy == 0.0 {
            return 0;
        }
        let b0 = self.boundaries[0];
        let mut rel = (dy.atan2(dx) - b0).rem_euclid(TAU);
        if rel >= TAU {
            rel = 0.0;
        }
        let a = b0 + rel;
        self.boundaries.partition_point(|&b| b <= a).saturating_sub(1)
    }

    pub fn rate_at(&self, x: f64, y: f64) -> f64 {
        self.rates[self.sector_of(x, y)]
    }
}

/// Node field of sector rates.
pub fn sectored_ros_field(grid: &Grid, spec: &SectorSpec) -> Result<ScalarField> {
    spec.validate()?;
    Ok(ScalarField::from_fn(*grid, |x, y| spec.rate_at(x, y)))
}

/// Time-indexed stack of rate fields, linearly interpolated in time and held
/// constant outside the covered interval.
#[derive(Debug, Clone)]
pub struct FieldStack {
    times: Vec<f64>,
    fields: Vec<ScalarField>,
}

impl FieldStack {
    pub fn new(times: Vec<f64>, fields: Vec<ScalarField>) -> Result<Self> {
        if times.is_empty() || times.len() != fields.len() {
            return Err(Error::InvalidParameter("field stack needs one time per field".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) || !times.iter().all(|t| t.is_finite()) {
            return Err(Error::InvalidParameter("field stack times must be finite and increasing".into()));
        }
        let grid = *fields[0].grid();
        for f in &fields {
            f.expect_grid(&grid)?;
            if !f.values().iter().all(|v| v.is_finite() && *v >= 0.0) {
                return Err(Error::InvalidParameter("rate fields must be finite and non-negative".into()));
            }
        }
        Ok(Self { times, fields })
    }

    pub fn single(field: ScalarField) -> Result<Self> {
        Self::new(vec![0.0], vec![field])
    }

    pub fn grid(&self) -> &Grid {
        self.fields[0].grid()
    }

    /// Bracketing slices `(lo, hi, weight of hi)` for time `t`.
    fn bracket(&self, t: f64) -> (usize, usize, f64) {
        let n = self.times.len();
        if n == 1 || t <= self.times[0] {
            return (0, 0, 0.0);
        }
        if t >= self.times[n - 1] {
            return (n - 1, n - 1, 0.0);
        }
        let hi = self.times.partition_point(|&s| s <= t);
        let lo = hi - 1;
        (lo, hi, (t - self.times[lo]) / (self.times[hi] - self.times[lo]))
    }

    fn at_node(&self, k: usize, t: f64) -> f64 {
        let (lo, hi, w) = self.bracket(t);
        let a = self.fields[lo].values()[k];
        if w == 0.0 {
            a
        } else {
            (1.0 - w) * a + w * self.fields[hi].values()[k]
        }
    }

    fn at_point(&self, x: f64, y: f64, t: f64) -> Result<f64> {
        let (lo, hi, w) = self.bracket(t);
        let a = self.fields[lo].bilinear(x, y)?;
        Ok(if w == 0.0 { a } else { (1.0 - w) * a + w * self.fields[hi].bilinear(x, y)? })
    }
}

/// Per-node Rothermel factors. When a factor has a direction, its
/// enhancement is projected onto the spread direction and clipped at zero.
#[derive(Debug, Clone)]
pub struct RothermelField {
    pub r0: ScalarField,
    pub phi_w: ScalarField,
    pub phi_s: ScalarField,
    /// Unit direction the wind blows toward.
    pub wind_dir: Option<[f64; 2]>,
    /// Unit upslope direction.
    pub upslope_dir: Option<[f64; 2]>,
}

impl RothermelField {
    fn validate(&self) -> Result<()> {
        let grid = *self.r0.grid();
        for f in [&self.phi_w, &self.phi_s] {
            f.expect_grid(&grid)?;
        }
        for f in [&self.r0, &self.phi_w, &self.phi_s] {
            if !f.values().iter().all(|v| v.is_finite() && *v >= 0.0) {
                return Err(Error::InvalidParameter("Rothermel inputs must be finite and non-negative".into()));
            }
        }
        Ok(())
    }

    fn combine(&self, r0: f64, phi_w: f64, phi_s: f64, direction: Option<[f64; 2]>) -> f64 {
        let project = |phi: f64, axis: Option<[f64; 2]>| match (axis, direction) {
            (Some(a), Some(d)) => phi * (a[0] * d[0] + a[1] * d[1]).max(0.0),
            _ => phi,
        };
        r0 * (1.0 + project(phi_w, self.wind_dir) + project(phi_s, self.upslope_dir))
    }
}

#[derive(Debug, Clone)]
pub enum RosBackend {
    Uniform(f64),
    Sectored(SectorSpec),
    Field(FieldStack),
    Rothermel(RothermelField),
}

/// Spread-rate evaluator over a grid domain.
#[derive(Debug, Clone)]
pub struct RosModel {
    grid: Grid,
    backend: RosBackend,
    r_min: f64,
}

impl RosModel {
    pub fn new(grid: Grid, backend: RosBackend, r_min: f64) -> Result<Self> {
        if !(r_min > 0.0 && r_min.is_finite()) {
            return Err(Error::InvalidParameter(format!("r_min must be positive, got {r_min}")));
        }
        match &backend {
            RosBackend::Uniform(r) if !(r.is_finite() && *r >= 0.0) => {
                return Err(Error::InvalidParameter(format!("uniform rate must be non-negative, got {r}")));
            }
            RosBackend::Sectored(s) => s.validate()?,
            RosBackend::Field(stack) => stack.grid().check_len(grid.len())?,
            RosBackend::Rothermel(r) => {
                r.validate()?;
                r.r0.expect_grid(&grid)?;
            }
            _ => {}
        }
        Ok(Self { grid, backend, r_min })
    }

    pub fn uniform(grid: Grid, rate: f64) -> Result<Self> {
        Self::new(grid, RosBackend::Uniform(rate), DEFAULT_R_MIN)
    }

    pub fn sectored(grid: Grid, spec: SectorSpec) -> Result<Self> {
        Self::new(grid, RosBackend::Sectored(spec), DEFAULT_R_MIN)
    }

    pub fn field(field: ScalarField) -> Result<Self> {
        let grid = *field.grid();
        Self::new(grid, RosBackend::Field(FieldStack::single(field)?), DEFAULT_R_MIN)
    }

    pub fn with_r_min(mut self, r_min: f64) -> Result<Self> {
        if !(r_min > 0.0 && r_min.is_finite()) {
            return Err(Error::InvalidParameter(format!("r_min must be positive, got {r_min}")));
        }
        self.r_min = r_min;
        Ok(self)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn r_min(&self) -> f64 {
        self.r_min
    }

    pub fn backend(&self) -> &RosBackend {
        &self.backend
    }

    /// True when the rate depends on neither time nor spread direction.
    pub fn is_static(&self) -> bool {
        match &self.backend {
            RosBackend::Uniform(_) | RosBackend::Sectored(_) => true,
            RosBackend::Field(stack) => stack.times.len() == 1,
            RosBackend::Rothermel(r) => r.wind_dir.is_none() && r.upslope_dir.is_none(),
        }
    }

    fn floor(&self, r: f64) -> f64 {
        r.max(self.r_min)
    }

    /// Spread rate at `(x, y)` and time `t`. `direction` is the unit spread
    /// direction when known; only the Rothermel backend uses it.
    pub fn evaluate(&self, x: f64, y: f64, t: f64, direction: Option<[f64; 2]>) -> Result<f64> {
        if !self.grid.contains(x, y) {
            return Err(Error::OutOfDomain { x, y });
        }
        let r = match &self.backend {
            RosBackend::Uniform(r) => *r,
            RosBackend::Sectored(s) => s.rate_at(x, y),
            RosBackend::Field(stack) => stack.at_point(x, y, t)?,
            RosBackend::Rothermel(f) => f.combine(
                f.r0.bilinear(x, y)?,
                f.phi_w.bilinear(x, y)?,
                f.phi_s.bilinear(x, y)?,
                direction,
            ),
        };
        Ok(self.floor(r))
    }

    /// Spread rate at node `k`; equal to [`RosModel::evaluate`] at the node
    /// coordinates without the interpolation overhead.
    #[inline]
    pub fn at_node(&self, k: usize, t: f64, direction: Option<[f64; 2]>) -> f64 {
        let r = match &self.backend {
            RosBackend::Uniform(r) => *r,
            RosBackend::Sectored(s) => {
                let (x, y) = self.grid.coords(k);
                s.rate_at(x, y)
            }
            RosBackend::Field(stack) => stack.at_node(k, t),
            RosBackend::Rothermel(f) => {
                f.combine(f.r0.values()[k], f.phi_w.values()[k], f.phi_s.values()[k], direction)
            }
        };
        self.floor(r)
    }

    /// Floored rates at every node at time `t`, ignoring direction.
    pub fn node_field(&self, t: f64) -> ScalarField {
        let values = (0..self.grid.len()).map(|k| self.at_node(k, t, None)).collect();
        ScalarField::new(self.grid, values).expect("model grid")
    }
}
