//! The four subcommands. Each validates its whole configuration and loads
//! every input before it creates the output directory.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use firefit_core::constraint::{build_constraints, locate_point, ConstraintSystem, Perimeter, PerimeterPoint};
use firefit_core::detection::{
    ignition_field, ignition_search, read_detections, sample_detections, write_detections, write_ranking,
    CombinedObjective, DetectionRecord, IgnitionCandidate, RankedCandidate,
};
use firefit_core::grid::{count_local_minima, read_esri_ascii, write_field, Grid, ScalarField};
use firefit_core::objective::{objective, IncrementalObjective, Objective};
use firefit_core::optimizer::{multiscale_descent, multiscale_fit, FitReport};
use firefit_core::smoother::{funnel_metric, solve_initial, InitialSolution, SpectralOperator};
use firefit_core::spread::{RosModel, SectorSpec};

use crate::config::{RosKind, RunConfig};
use crate::error::CliError;

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

/// Rate-of-spread model described by the config.
pub fn load_ros(cfg: &RunConfig, grid: &Grid) -> Result<RosModel, CliError> {
    let r = &cfg.ros;
    let model = match r.kind {
        RosKind::Uniform => RosModel::uniform(*grid, r.rate),
        RosKind::Sectored => {
            let center = r.center.map_or_else(|| cfg.default_center(), Ok)?;
            SectorSpec::equal(center, r.start_angle, r.rates.clone()).and_then(|s| RosModel::sectored(*grid, s))
        }
        RosKind::File => {
            let path = r.path.as_deref().ok_or_else(|| invalid("ros.path is required"))?;
            let f = read_esri_ascii(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
            let fg = f.grid();
            let tol = 1e-9 * grid.dx;
            let same = fg.nx == grid.nx
                && fg.ny == grid.ny
                && (fg.dx - grid.dx).abs() <= tol
                && (fg.dy - grid.dy).abs() <= tol
                && (fg.x0 - grid.x0).abs() <= tol
                && (fg.y0 - grid.y0).abs() <= tol;
            if !same {
                return Err(invalid(format!("{} does not match the configured grid", path.display())));
            }
            ScalarField::new(*grid, f.into_values()).and_then(RosModel::field)
        }
    };
    model.and_then(|m| m.with_r_min(r.r_min)).map_err(|e| invalid(format!("ros: {e}")))
}

/// Reads perimeter CSV files with header `x,y,time` or
/// `x,y,time,perimeter_id`. Without ids, each run of rows with equal time is
/// one perimeter; with ids, points are grouped by id in increasing order.
pub fn read_perimeters(paths: &[PathBuf]) -> Result<Vec<Perimeter>, CliError> {
    let mut out = Vec::new();
    for path in paths {
        let bad = |msg: String| invalid(format!("{}: {msg}", path.display()));
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| bad(e.to_string()))?;
        let header = rdr.headers().map_err(|e| bad(e.to_string()))?;
        let with_id = match header.iter().collect::<Vec<_>>()[..] {
            ["x", "y", "time"] => false,
            ["x", "y", "time", "perimeter_id"] => true,
            _ => return Err(bad("expected header x,y,time or x,y,time,perimeter_id".into())),
        };
        let mut groups: std::collections::BTreeMap<i64, Vec<PerimeterPoint>> = Default::default();
        let mut run_id = -1i64;
        let mut last_time = None;
        for (line, row) in rdr.records().enumerate() {
            let row = row.map_err(|e| bad(e.to_string()))?;
            let num = |i: usize| -> Result<f64, CliError> {
                row[i].parse().map_err(|_| bad(format!("row {}: bad number {:?}", line + 1, &row[i])))
            };
            let time = num(2)?;
            let id = if with_id {
                row[3].parse().map_err(|_| bad(format!("row {}: bad perimeter id {:?}", line + 1, &row[3])))?
            } else {
                if last_time != Some(time) {
                    run_id += 1;
                    last_time = Some(time);
                }
                run_id
            };
            groups.entry(id).or_default().push(PerimeterPoint { x: num(0)?, y: num(1)?, time });
        }
        for (_, pts) in groups {
            out.push(Perimeter::new(pts).map_err(|e| bad(e.to_string()))?);
        }
    }
    if out.is_empty() {
        return Err(invalid("the perimeter files contain no points"));
    }
    Ok(out)
}

pub fn write_perimeters(path: &Path, perimeters: &[Perimeter]) -> anyhow::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "x,y,time,perimeter_id")?;
    for (id, p) in perimeters.iter().enumerate() {
        for pt in p.points() {
            writeln!(w, "{:.16e},{:.16e},{:.16e},{id}", pt.x, pt.y, pt.time)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Value at `(x, y)` of the piecewise-linear interpolant on the
/// triangulation the constraints use.
pub fn triangle_interpolate(field: &ScalarField, x: f64, y: f64) -> firefit_core::Result<f64> {
    let loc = locate_point(field.grid(), x, y)?;
    Ok(loc.nodes.iter().zip(loc.weights).map(|(&k, w)| w * field.values()[k]).sum())
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

fn write_grid(dir: &Path, name: &str, field: &ScalarField) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    Ok(write_field(&path, field).with_context(|| format!("writing {}", path.display()))?)
}

/// Files and fields produced by `gen-case`.
#[derive(Debug, Clone)]
pub struct CaseOutput {
    pub grid: Grid,
    pub center: [f64; 2],
    pub radii: [f64; 2],
    pub rates: ScalarField,
    pub exact: ScalarField,
    pub perimeters: Vec<Perimeter>,
    pub detections: Vec<DetectionRecord>,
    /// Config that runs `init`/`fit` on the generated files.
    pub config_path: PathBuf,
}

/// Builds the concentric-circles case: sectored rates around a central
/// ignition, the fast-marched arrival field, and two circular perimeters
/// whose point times are read from that field.
pub fn cmd_gen_case(cfg: &RunConfig) -> Result<CaseOutput, CliError> {
    cfg.validate_case()?;
    let grid = cfg.grid()?;
    let ros = load_ros(cfg, &grid)?;
    let center = cfg.ros.center.map_or_else(|| cfg.default_center(), Ok)?;
    let radii = cfg.case_radii();
    let exact = ignition_field(&ros, &IgnitionCandidate { x: center[0], y: center[1], t: 0.0 })?;
    let mut perimeters = vec![Perimeter::new(vec![PerimeterPoint {
        x: center[0],
        y: center[1],
        time: triangle_interpolate(&exact, center[0], center[1])?,
    }])?];
    let n = cfg.case.points;
    for r in radii {
        let pts = (0..n)
            .map(|k| {
                let a = std::f64::consts::TAU * k as f64 / n as f64;
                let (x, y) = (center[0] + r * a.cos(), center[1] + r * a.sin());
                Ok(PerimeterPoint { x, y, time: triangle_interpolate(&exact, x, y)? })
            })
            .collect::<firefit_core::Result<Vec<_>>>()?;
        perimeters.push(Perimeter::new(pts)?);
    }
    let mut detections = Vec::new();
    if cfg.case.detections > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let [t0, t1] = cfg.case.detection_window.unwrap_or([0.0, 1.25 * cfg.case.times[1]]);
        let obs: Vec<(f64, f64, f64)> = (0..cfg.case.detections)
            .map(|_| {
                let x = grid.x0 + rng.random::<f64>() * (grid.x_max() - grid.x0);
                let y = grid.y0 + rng.random::<f64>() * (grid.y_max() - grid.y0);
                (x, y, t0 + rng.random::<f64>() * (t1 - t0))
            })
            .collect();
        detections = sample_detections(&exact, &obs, cfg.detection.half_width, &cfg.detection_config(), &mut rng)?;
    }
    let rates = ros.node_field(0.0);

    let out = &cfg.output_dir;
    create_dir(out)?;
    let ros_path = write_grid(out, "ros.asc", &rates)?;
    let exact_path = write_grid(out, "exact.asc", &exact)?;
    write_perimeters(&out.join("perimeters.csv"), &perimeters)?;
    let mut case_cfg = cfg.clone();
    case_cfg.ros.kind = RosKind::File;
    case_cfg.ros.path = Some(file_name(&ros_path));
    case_cfg.perimeters = vec!["perimeters.csv".into()];
    case_cfg.exact = Some(file_name(&exact_path));
    case_cfg.output_dir = "results".into();
    case_cfg.detections = None;
    if !detections.is_empty() {
        write_detections(&out.join("detections.csv"), &detections)?;
        case_cfg.detections = Some("detections.csv".into());
    }
    let config_path = out.join("case.toml");
    let text = toml::to_string(&case_cfg).context("serializing case config")?;
    std::fs::write(&config_path, text).with_context(|| format!("writing {}", config_path.display()))?;
    Ok(CaseOutput { grid, center, radii, rates, exact, perimeters, detections, config_path })
}

fn file_name(p: &Path) -> PathBuf {
    p.file_name().map(PathBuf::from).unwrap_or_else(|| p.to_path_buf())
}

/// Inputs shared by `init` and `fit`.
pub struct FitInputs {
    pub grid: Grid,
    pub ros: RosModel,
    pub perimeters: Vec<Perimeter>,
    pub exact: Option<ScalarField>,
    pub detections: Option<Vec<DetectionRecord>>,
}

pub fn load_fit_inputs(cfg: &RunConfig) -> Result<FitInputs, CliError> {
    let grid = cfg.grid()?;
    let ros = load_ros(cfg, &grid)?;
    let perimeters = read_perimeters(&cfg.perimeters)?;
    for p in &perimeters {
        for pt in p.points() {
            if !grid.contains(pt.x, pt.y) {
                return Err(invalid(format!("perimeter point ({}, {}) lies outside the grid", pt.x, pt.y)));
            }
        }
    }
    let exact = match &cfg.exact {
        Some(p) => {
            let f = read_esri_ascii(p).map_err(|e| invalid(format!("{}: {e}", p.display())))?;
            if f.grid().nx != grid.nx || f.grid().ny != grid.ny {
                return Err(invalid(format!("{} does not match the configured grid", p.display())));
            }
            Some(ScalarField::new(grid, f.into_values())?)
        }
        None => None,
    };
    let detections = match &cfg.detections {
        Some(p) => Some(read_detections(p, cfg.detection.half_width).map_err(|e| invalid(e.to_string()))?),
        None => None,
    };
    Ok(FitInputs { grid, ros, perimeters, exact, detections })
}

/// Nodes carrying the most weight of each single-point perimeter.
pub fn ignition_nodes(grid: &Grid, perimeters: &[Perimeter]) -> Vec<usize> {
    perimeters
        .iter()
        .filter(|p| p.is_point())
        .filter_map(|p| {
            let pt = p.points()[0];
            let loc = locate_point(grid, pt.x, pt.y).ok()?;
            let best = (0..3).max_by(|&a, &b| loc.weights[a].total_cmp(&loc.weights[b]).then(b.cmp(&a)))?;
            Some(loc.nodes[best])
        })
        .collect()
}

/// Root-mean-square of `a − b` relative to that of `b`, over `nodes`.
pub fn relative_rms(a: &ScalarField, b: &ScalarField, nodes: &[usize]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for &k in nodes {
        let d = a.values()[k] - b.values()[k];
        num += d * d;
        den += b.values()[k] * b.values()[k];
    }
    (num / den).sqrt()
}

#[derive(Debug, Clone)]
pub struct InitRun {
    pub alpha: f64,
    pub solution: InitialSolution,
    /// Largest funnel metric over the ignition nodes (NaN without ignitions).
    pub funnel: f64,
    pub local_minima: usize,
    pub objective: f64,
    pub path: PathBuf,
}

fn initialize(
    cfg: &RunConfig,
    inputs: &FitInputs,
    constraints: &ConstraintSystem,
    alpha: f64,
) -> Result<(InitialSolution, f64, usize, f64), CliError> {
    let op = SpectralOperator::with_force(inputs.grid, alpha, cfg.smoother.force)?;
    let sol = solve_initial(constraints, &op, &cfg.smoother_config(alpha))?;
    let funnel = ignition_nodes(&inputs.grid, &inputs.perimeters)
        .into_iter()
        .map(|k| funnel_metric(&sol.field, k))
        .fold(f64::NAN, f64::max);
    let exempt = constraints.constrained_nodes();
    let minima = count_local_minima(&sol.field, &exempt)?;
    let j = objective(&sol.field, &inputs.ros, &cfg.objective_config(), &exempt)?;
    Ok((sol, funnel, minima, j))
}

fn alpha_name(alpha: f64) -> String {
    format!("init_alpha_{alpha:.2}.asc")
}

/// Initial fields for every exponent in `smoother.alphas`, plus a report.
pub fn cmd_init(cfg: &RunConfig) -> Result<Vec<InitRun>, CliError> {
    let alphas = cfg.smoother.alphas.clone();
    cfg.validate_fit(&alphas)?;
    let inputs = load_fit_inputs(cfg)?;
    let constraints = build_constraints(&inputs.grid, &inputs.perimeters)?;
    let mut runs = Vec::new();
    for &alpha in &alphas {
        let (solution, funnel, local_minima, objective) = initialize(cfg, &inputs, &constraints, alpha)?;
        log::info!("alpha {alpha}: {} iterations, funnel {funnel:.6e}", solution.iterations);
        runs.push(InitRun { alpha, solution, funnel, local_minima, objective, path: PathBuf::new() });
    }
    let out = &cfg.output_dir;
    create_dir(out)?;
    for run in &mut runs {
        run.path = write_grid(out, &alpha_name(run.alpha), &run.solution.field)?;
    }
    let report = out.join("init_report.csv");
    let mut w = std::io::BufWriter::new(std::fs::File::create(&report).with_context(|| format!("writing {}", report.display()))?);
    writeln!(w, "alpha,iterations,converged,funnel,local_minima,objective")?;
    for r in &runs {
        writeln!(
            w,
            "{:.16e},{},{},{:.16e},{},{:.16e}",
            r.alpha, r.solution.iterations, r.solution.converged, r.funnel, r.local_minima, r.objective
        )?;
    }
    w.flush()?;
    Ok(runs)
}

#[derive(Debug, Clone)]
pub struct FitRun {
    pub initial: ScalarField,
    pub field: ScalarField,
    pub report: FitReport,
    pub constraints: ConstraintSystem,
    pub init_iterations: usize,
    pub field_path: PathBuf,
    pub report_path: PathBuf,
    pub summary_path: PathBuf,
}

/// Initializer followed by the multiscale descent.
pub fn cmd_fit(cfg: &RunConfig) -> Result<FitRun, CliError> {
    let alpha = cfg.smoother.alpha;
    cfg.validate_fit(&[alpha])?;
    let inputs = load_fit_inputs(cfg)?;
    let start = Instant::now();
    let constraints = build_constraints(&inputs.grid, &inputs.perimeters)?;
    let (init, _, _, _) = initialize(cfg, &inputs, &constraints, alpha)?;
    let ocfg = cfg.objective_config();
    let sched = cfg.schedule();
    let (field, report) = match (&inputs.detections, cfg.detection.lambda > 0.0) {
        (Some(recs), true) => {
            let obj = Objective::new(&inputs.ros, &ocfg, &constraints.constrained_nodes())?;
            let inc = IncrementalObjective::new(obj, init.field.values());
            let mut comb =
                CombinedObjective::new(inc, recs.clone(), cfg.detection_config(), cfg.detection.lambda, init.field.values())?;
            multiscale_descent(&init.field, &constraints, &mut comb, &sched)?
        }
        _ => multiscale_fit(&init.field, &constraints, &inputs.ros, &ocfg, &sched)?,
    };
    log::info!(
        "fit: {} line searches, J {:.6e} -> {:.6e}, {:.2?}",
        report.records.len(),
        report.initial_objective,
        report.final_objective(),
        start.elapsed()
    );

    let out = &cfg.output_dir;
    create_dir(out)?;
    write_grid(out, "init.asc", &init.field)?;
    let field_path = write_grid(out, "fit.asc", &field)?;
    let report_path = out.join("fit_report.csv");
    report.write_csv(&report_path)?;
    let summary_path = out.join("fit_summary.csv");
    let mut rows: Vec<(&str, String)> = vec![
        ("alpha", format!("{alpha:.16e}")),
        ("initializer_iterations", init.iterations.to_string()),
        ("initial_objective", format!("{:.16e}", report.initial_objective)),
        ("final_objective", format!("{:.16e}", report.final_objective())),
        ("line_searches", report.records.len().to_string()),
        ("accepted", report.records.iter().filter(|r| r.step != 0.0).count().to_string()),
        ("final_violation", format!("{:.16e}", report.final_violation)),
        ("max_violation", format!("{:.16e}", report.max_violation)),
    ];
    if let Some(exact) = &inputs.exact {
        let all: Vec<usize> = (0..inputs.grid.len()).collect();
        rows.push(("rms_error_init", format!("{:.16e}", relative_rms(&init.field, exact, &all))));
        rows.push(("rms_error_fit", format!("{:.16e}", relative_rms(&field, exact, &all))));
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(&summary_path)?);
    writeln!(w, "key,value")?;
    for (k, v) in rows {
        writeln!(w, "{k},{v}")?;
    }
    w.flush()?;
    Ok(FitRun {
        initial: init.field,
        field,
        report,
        constraints,
        init_iterations: init.iterations,
        field_path,
        report_path,
        summary_path,
    })
}

/// Ranks the candidate lattice by detection log-likelihood.
pub fn cmd_ignition(cfg: &RunConfig) -> Result<Vec<RankedCandidate>, CliError> {
    cfg.validate_ignition()?;
    let grid = cfg.grid()?;
    let ros = load_ros(cfg, &grid)?;
    let path = cfg.detections.as_deref().ok_or_else(|| invalid("ignition search needs a detections file"))?;
    let recs = read_detections(path, cfg.detection.half_width).map_err(|e| invalid(e.to_string()))?;
    let candidates: Vec<IgnitionCandidate> =
        cfg.candidates()?.into_iter().map(|(x, y, t)| IgnitionCandidate { x, y, t }).collect();
    let ranked = ignition_search(&candidates, &recs, &ros, &cfg.detection_config())?;
    create_dir(&cfg.output_dir)?;
    write_ranking(&cfg.output_dir.join("ignition.csv"), &ranked)?;
    Ok(ranked)
}
