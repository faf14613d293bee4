//! Run configuration, read from TOML.
//!
//! Every section is optional and falls back to the defaults of the
//! idealized concentric-circles case. Relative paths resolve against the
//! directory of the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use firefit_core::detection::DetectionConfig;
use firefit_core::grid::Grid;
use firefit_core::objective::{ObjectiveConfig, PenaltyWeight, ResidualForm};
use firefit_core::optimizer::LevelSchedule;
use firefit_core::smoother::SmootherConfig;
use firefit_core::spread::DEFAULT_R_MIN;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSection,
    pub ros: RosSection,
    /// Perimeter CSV files with header `x,y,time,perimeter_id`.
    pub perimeters: Vec<PathBuf>,
    /// Detection CSV with header `x,y,t,flag`.
    pub detections: Option<PathBuf>,
    /// Reference arrival-time grid, used only for error summaries.
    pub exact: Option<PathBuf>,
    pub smoother: SmootherSection,
    pub objective: ObjectiveSection,
    pub schedule: ScheduleSection,
    pub detection: DetectionSection,
    pub ignition: IgnitionSection,
    pub case: CaseSection,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            grid: GridSection::default(),
            ros: RosSection::default(),
            perimeters: Vec::new(),
            detections: None,
            exact: None,
            smoother: SmootherSection::default(),
            objective: ObjectiveSection::default(),
            schedule: ScheduleSection::default(),
            detection: DetectionSection::default(),
            ignition: IgnitionSection::default(),
            case: CaseSection::default(),
            output_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    /// Defaults to `dx`.
    pub dy: Option<f64>,
    pub x0: f64,
    pub y0: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { nx: 100, ny: 100, dx: 1.0, dy: None, x0: 0.0, y0: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RosKind {
    Uniform,
    Sectored,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RosSection {
    pub kind: RosKind,
    /// Rate for `uniform`.
    pub rate: f64,
    /// Equal-sector rates for `sectored`, counter-clockwise from `start_angle`.
    pub rates: Vec<f64>,
    /// Sector center; defaults to the node nearest the domain center.
    pub center: Option<[f64; 2]>,
    pub start_angle: f64,
    /// ESRI ASCII rate grid for `file`.
    pub path: Option<PathBuf>,
    pub r_min: f64,
}

impl Default for RosSection {
    fn default() -> Self {
        Self {
            kind: RosKind::Sectored,
            rate: 1.0,
            rates: vec![1.0, 0.7, 0.5, 0.8],
            center: None,
            start_angle: 0.0,
            path: None,
            r_min: DEFAULT_R_MIN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmootherSection {
    /// Exponent used by `fit`.
    pub alpha: f64,
    /// Exponents swept by `init`.
    pub alphas: Vec<f64>,
    pub rho: f64,
    pub pcg_tol: f64,
    pub pcg_maxit: usize,
    /// Admit exponents below 1.
    pub force: bool,
}

impl Default for SmootherSection {
    fn default() -> Self {
        Self { alpha: 1.4, alphas: vec![1.0, 1.1, 1.2, 1.3, 1.4], rho: 1.0, pcg_tol: 1e-4, pcg_maxit: 200, force: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FVariant {
    Product,
    Difference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveSection {
    pub f_variant: FVariant,
    pub p: f64,
    /// Defaults to ten times the domain average of `1/R²`.
    pub penalty_weight: Option<f64>,
}

impl Default for ObjectiveSection {
    fn default() -> Self {
        Self { f_variant: FVariant::Product, p: 2.0, penalty_weight: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub coarsest_step: usize,
    pub cycles: usize,
    /// Sweeps per level, coarsest first; defaults to `1, 2, ...`.
    pub sweeps: Option<Vec<usize>>,
    pub bracket_scale: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self { coarsest_step: 32, cycles: 4, sweeps: None, bracket_scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionSection {
    pub sigma: f64,
    pub a: f64,
    pub b: f64,
    pub p_false: f64,
    pub p_max: f64,
    pub tau: f64,
    pub half_width: f64,
    /// Weight of the log-likelihood in `fit`; 0 fits the residual alone.
    pub lambda: f64,
}

impl Default for DetectionSection {
    fn default() -> Self {
        let d = DetectionConfig::default();
        Self { sigma: d.sigma, a: d.a, b: d.b, p_false: d.p_false, p_max: d.p_max, tau: d.tau, half_width: 375.0, lambda: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IgnitionSection {
    /// Candidate lattice extent; defaults to the middle half of the domain.
    pub x_range: Option<[f64; 2]>,
    pub y_range: Option<[f64; 2]>,
    pub nx: usize,
    pub ny: usize,
    pub times: Vec<f64>,
}

impl Default for IgnitionSection {
    fn default() -> Self {
        Self { x_range: None, y_range: None, nx: 5, ny: 5, times: vec![0.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaseSection {
    /// Perimeter times, inner first.
    pub times: [f64; 2],
    /// Circle radii; default `time × fastest rate`.
    pub radii: Option<[f64; 2]>,
    pub points: usize,
    /// Number of synthetic detection records to sample (0 = none).
    pub detections: usize,
    /// Observation time window of the synthetic detections.
    pub detection_window: Option<[f64; 2]>,
}

impl Default for CaseSection {
    fn default() -> Self {
        Self { times: [16.0, 40.0], radii: None, points: 128, detections: 0, detection_window: None }
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

impl RunConfig {
    /// Parses a config file and resolves its relative paths.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.perimeters.iter_mut().for_each(fix);
        self.detections.as_mut().map(fix);
        self.exact.as_mut().map(fix);
        self.ros.path.as_mut().map(fix);
        fix(&mut self.output_dir);
    }

    pub fn grid(&self) -> Result<Grid, CliError> {
        let g = &self.grid;
        Grid::new(g.nx, g.ny, g.dx, g.dy.unwrap_or(g.dx), g.x0, g.y0).map_err(|e| invalid(format!("grid: {e}")))
    }

    /// Node nearest the domain center.
    pub fn default_center(&self) -> Result<[f64; 2], CliError> {
        let g = self.grid()?;
        Ok([g.x(g.nx / 2), g.y(g.ny / 2)])
    }

    pub fn smoother_config(&self, alpha: f64) -> SmootherConfig {
        let s = &self.smoother;
        SmootherConfig { alpha, rho: s.rho, pcg_tol: s.pcg_tol, pcg_maxit: s.pcg_maxit }
    }

    pub fn objective_config(&self) -> ObjectiveConfig {
        let o = &self.objective;
        ObjectiveConfig {
            form: match o.f_variant {
                FVariant::Product => ResidualForm::Product,
                FVariant::Difference => ResidualForm::Difference,
            },
            p: o.p,
            penalty_weight: o.penalty_weight.map_or(PenaltyWeight::Auto, PenaltyWeight::Fixed),
        }
    }

    pub fn schedule(&self) -> LevelSchedule {
        let s = &self.schedule;
        let mut sched = LevelSchedule::linear(s.coarsest_step, s.cycles);
        if let Some(sw) = &s.sweeps {
            sched.sweeps = sw.clone();
        }
        sched.bracket_scale = s.bracket_scale;
        sched
    }

    pub fn detection_config(&self) -> DetectionConfig {
        let d = &self.detection;
        DetectionConfig { sigma: d.sigma, a: d.a, b: d.b, p_false: d.p_false, p_max: d.p_max, tau: d.tau }
    }

    /// Checks the settings shared by all commands.
    pub fn validate_common(&self) -> Result<(), CliError> {
        self.grid()?;
        let r = &self.ros;
        if !(r.r_min > 0.0 && r.r_min.is_finite()) {
            return Err(invalid(format!("ros.r_min must be positive, got {}", r.r_min)));
        }
        match r.kind {
            RosKind::Uniform => {
                if !(r.rate > 0.0 && r.rate.is_finite()) {
                    return Err(invalid(format!("ros.rate must be positive, got {}", r.rate)));
                }
            }
            RosKind::Sectored => {
                if r.rates.is_empty() || r.rates.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                    return Err(invalid("ros.rates must be a non-empty list of positive rates"));
                }
            }
            RosKind::File => match &r.path {
                None => return Err(invalid("ros.path is required when ros.kind = \"file\"")),
                Some(p) => require_file(p)?,
            },
        }
        Ok(())
    }

    /// Checks everything `init` and `fit` read.
    pub fn validate_fit(&self, alphas: &[f64]) -> Result<(), CliError> {
        self.validate_common()?;
        if self.perimeters.is_empty() {
            return Err(invalid("at least one perimeter file is required"));
        }
        for p in &self.perimeters {
            require_file(p)?;
        }
        if let Some(p) = &self.exact {
            require_file(p)?;
        }
        if alphas.is_empty() {
            return Err(invalid("smoother.alphas must not be empty"));
        }
        for &a in alphas {
            if !(a.is_finite() && a > 0.0 && (a >= 1.0 || self.smoother.force)) {
                return Err(invalid(format!("fractional exponent {a} must be >= 1 (set smoother.force to allow smaller)")));
            }
        }
        self.smoother_config(alphas[0]).validate().map_err(|e| invalid(format!("smoother: {e}")))?;
        self.objective_config().validate().map_err(|e| invalid(format!("objective: {e}")))?;
        self.schedule().validate().map_err(|e| invalid(format!("schedule: {e}")))?;
        if self.detection.lambda != 0.0 {
            self.validate_detection()?;
            if !(self.detection.lambda > 0.0 && self.detection.lambda.is_finite()) {
                return Err(invalid(format!("detection.lambda must be >= 0, got {}", self.detection.lambda)));
            }
            if self.detections.is_none() {
                return Err(invalid("detection.lambda > 0 needs a detections file"));
            }
        }
        Ok(())
    }

    pub fn validate_detection(&self) -> Result<(), CliError> {
        self.detection_config().validate().map_err(|e| invalid(format!("detection: {e}")))?;
        if !(self.detection.half_width >= 0.0 && self.detection.half_width.is_finite()) {
            return Err(invalid("detection.half_width must be >= 0"));
        }
        if let Some(p) = &self.detections {
            require_file(p)?;
        }
        Ok(())
    }

    pub fn validate_ignition(&self) -> Result<(), CliError> {
        self.validate_common()?;
        self.validate_detection()?;
        if self.detections.is_none() {
            return Err(invalid("ignition search needs a detections file"));
        }
        let ig = &self.ignition;
        if ig.nx == 0 || ig.ny == 0 || ig.times.is_empty() {
            return Err(invalid("ignition lattice needs nx, ny >= 1 and at least one time"));
        }
        if ig.times.iter().any(|t| !t.is_finite()) {
            return Err(invalid("ignition times must be finite"));
        }
        let g = self.grid()?;
        for (x, y, _) in self.candidates()? {
            if !g.contains(x, y) {
                return Err(invalid(format!("ignition candidate ({x}, {y}) lies outside the grid")));
            }
        }
        Ok(())
    }

    /// Candidate `(x, y, t)` in row-major lattice order, times innermost.
    pub fn candidates(&self) -> Result<Vec<(f64, f64, f64)>, CliError> {
        let g = self.grid()?;
        let ig = &self.ignition;
        let (w, h) = (g.x_max() - g.x0, g.y_max() - g.y0);
        let xr = ig.x_range.unwrap_or([g.x0 + 0.25 * w, g.x0 + 0.75 * w]);
        let yr = ig.y_range.unwrap_or([g.y0 + 0.25 * h, g.y0 + 0.75 * h]);
        let lin = |r: [f64; 2], n: usize, k: usize| {
            if n == 1 {
                0.5 * (r[0] + r[1])
            } else {
                r[0] + (r[1] - r[0]) * k as f64 / (n - 1) as f64
            }
        };
        let mut out = Vec::new();
        for j in 0..ig.ny {
            for i in 0..ig.nx {
                for &t in &ig.times {
                    out.push((lin(xr, ig.nx, i), lin(yr, ig.ny, j), t));
                }
            }
        }
        Ok(out)
    }

    /// Checks the `gen-case` settings.
    pub fn validate_case(&self) -> Result<(), CliError> {
        self.validate_common()?;
        if self.ros.kind == RosKind::File {
            return Err(invalid("gen-case needs a uniform or sectored rate of spread"));
        }
        let c = &self.case;
        if !(c.times[0] > 0.0 && c.times[0] < c.times[1] && c.times[1].is_finite()) {
            return Err(invalid(format!("case.times must satisfy 0 < T1 < T2, got {:?}", c.times)));
        }
        if c.points < 3 {
            return Err(invalid("case.points must be at least 3"));
        }
        let radii = self.case_radii();
        if !(radii[0] > 0.0 && radii[0] < radii[1]) {
            return Err(invalid(format!("case radii must satisfy 0 < r1 < r2, got {radii:?}")));
        }
        let g = self.grid()?;
        let [cx, cy] = self.ros.center.map_or_else(|| self.default_center(), Ok)?;
        if !g.contains(cx, cy) {
            return Err(invalid(format!("center ({cx}, {cy}) lies outside the grid")));
        }
        let fits = cx - radii[1] >= g.x0 && cx + radii[1] <= g.x_max() && cy - radii[1] >= g.y0 && cy + radii[1] <= g.y_max();
        if !fits {
            return Err(invalid(format!("outer circle of radius {} does not fit in the grid", radii[1])));
        }
        if c.detections > 0 {
            self.validate_detection()?;
            if let Some([a, b]) = c.detection_window {
                if !(a.is_finite() && b.is_finite() && a <= b) {
                    return Err(invalid("case.detection_window must be an increasing pair"));
                }
            }
        }
        Ok(())
    }

    pub fn case_radii(&self) -> [f64; 2] {
        self.case.radii.unwrap_or_else(|| {
            let fastest = match self.ros.kind {
                RosKind::Uniform => self.ros.rate,
                _ => self.ros.rates.iter().copied().fold(0.0, f64::max),
            };
            [self.case.times[0] * fastest, self.case.times[1] * fastest]
        })
    }
}

fn require_file(p: &Path) -> Result<(), CliError> {
    if !p.is_file() {
        return Err(invalid(format!("file not found: {}", p.display())));
    }
    Ok(())
}
