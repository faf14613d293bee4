//! Likelihood of satellite fire detections given an arrival-time field.
//!
//! A pixel at nominal center `(x, y)` observed at time `t` registers fire
//! with probability
//!
//! ```text
//! Σ_c w_c · q(proxy_c),   w_c ∝ exp(−d_c²/σ²) over nodes with d_c ≤ 3σ
//! ```
//!
//! where `q` is a logistic curve squeezed into `[p_false, p_max]` and the
//! proxy decays exponentially after the arrival time of node `c`.

use std::io::Write;
use std::path::Path;

use rand::{Rng, RngExt};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{cell_coord, Grid, ScalarField};
use crate::objective::{fast_march, IncrementalObjective, SumTree};
use crate::optimizer::DescentObjective;
use crate::sparse::SparseVec;
use crate::spread::RosModel;

/// Kernel truncation radius in units of sigma.
pub const KERNEL_RADIUS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectionFlag {
    Fire,
    NoFire,
    /// Cloud, missing granule or otherwise unusable; carries no information.
    Missing,
}

impl DetectionFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            DetectionFlag::Fire => "fire",
            DetectionFlag::NoFire => "nofire",
            DetectionFlag::Missing => "missing",
        }
    }
}

impl std::str::FromStr for DetectionFlag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "fire" => Ok(DetectionFlag::Fire),
            "nofire" => Ok(DetectionFlag::NoFire),
            "missing" => Ok(DetectionFlag::Missing),
            other => Err(Error::Parse(format!("unknown detection flag {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionRecord {
    pub x: f64,
    pub y: f64,
    pub t: f64,
    pub flag: DetectionFlag,
    /// Half the sensor footprint; informational.
    pub half_width: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionConfig {
    /// Position-error scale.
    pub sigma: f64,
    /// Logistic intercept.
    pub a: f64,
    /// Logistic slope.
    pub b: f64,
    pub p_false: f64,
    pub p_max: f64,
    /// Decay time of the heat proxy after arrival.
    pub tau: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self { sigma: 500.0, a: -10.0, b: 20.0, p_false: 0.05, p_max: 0.95, tau: 3600.0 }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma > 0.0
            && self.sigma.is_finite()
            && self.tau > 0.0
            && self.tau.is_finite()
            && self.a.is_finite()
            && self.b.is_finite()
            && 0.0 < self.p_false
            && self.p_false < self.p_max
            && self.p_max < 1.0;
        if !ok {
            return Err(Error::InvalidParameter(format!("invalid detection settings {self:?}")));
        }
        Ok(())
    }
}

/// `0` before arrival, `exp(−(t_obs − T)/τ)` after.
pub fn heat_proxy(t: &ScalarField, node: usize, t_obs: f64, cfg: &DetectionConfig) -> f64 {
    proxy(t.values()[node], t_obs, cfg.tau)
}

#[inline]
fn proxy(arrival: f64, t_obs: f64, tau: f64) -> f64 {
    if t_obs < arrival {
        0.0
    } else {
        (-(t_obs - arrival) / tau).exp()
    }
}

/// `p_false + (p_max − p_false) / (1 + exp(−(a + b·proxy)))`.
pub fn detect_prob(proxy: f64, cfg: &DetectionConfig) -> f64 {
    let s = 1.0 / (1.0 + (-(cfg.a + cfg.b * proxy)).exp());
    (cfg.p_false + (cfg.p_max - cfg.p_false) * s).clamp(cfg.p_false, cfg.p_max)
}

/// Normalized position-error weights of the nodes around `(x, y)`.
///
/// Falls back to the nearest node when no node lies within the truncation
/// radius (the narrow-kernel limit).
pub fn kernel_weights(grid: &Grid, x: f64, y: f64, sigma: f64) -> Result<Vec<(usize, f64)>> {
    let pad = KERNEL_RADIUS * sigma;
    let inside = x >= grid.x0 - pad && x <= grid.x_max() + pad && y >= grid.y0 - pad && y <= grid.y_max() + pad;
    if !(inside && x.is_finite() && y.is_finite()) {
        return Err(Error::OutOfDomain { x, y });
    }
    let range = |c: f64, o: f64, h: f64, n: usize| {
        let lo = ((c - pad - o) / h).ceil().max(0.0);
        let hi = ((c + pad - o) / h).floor().min((n - 1) as f64);
        (lo as usize, hi as isize)
    };
    let (i0, i1) = range(x, grid.x0, grid.dx, grid.nx);
    let (j0, j1) = range(y, grid.y0, grid.dy, grid.ny);
    let mut out = Vec::new();
    let mut total = 0.0;
    for j in j0 as isize..=j1 {
        for i in i0 as isize..=i1 {
            let (i, j) = (i as usize, j as usize);
            let d2 = (grid.x(i) - x).powi(2) + (grid.y(j) - y).powi(2);
            if d2 <= pad * pad {
                let w = (-d2 / (sigma * sigma)).exp();
                total += w;
                out.push((grid.index(i, j), w));
            }
        }
    }
    if out.is_empty() || !(total > 0.0) {
        return Ok(vec![(grid.nearest_node(x, y), 1.0)]);
    }
    for (_, w) in &mut out {
        *w /= total;
    }
    Ok(out)
}

#[inline]
fn weighted_prob(kernel: &[(usize, f64)], arrival: impl Fn(usize) -> f64, t_obs: f64, cfg: &DetectionConfig) -> f64 {
    let p: f64 = kernel.iter().map(|&(k, w)| w * detect_prob(proxy(arrival(k), t_obs, cfg.tau), cfg)).sum();
    p.clamp(cfg.p_false, cfg.p_max)
}

/// Probability that the pixel of `rec` registers fire under arrival field `t`.
pub fn pixel_fire_prob(t: &ScalarField, rec: &DetectionRecord, cfg: &DetectionConfig) -> Result<f64> {
    let kernel = kernel_weights(t.grid(), rec.x, rec.y, cfg.sigma)?;
    let v = t.values();
    Ok(weighted_prob(&kernel, |k| v[k], rec.t, cfg))
}

#[inline]
fn record_term(flag: DetectionFlag, p: f64) -> f64 {
    match flag {
        DetectionFlag::Fire => p.ln(),
        DetectionFlag::NoFire => (1.0 - p).ln(),
        DetectionFlag::Missing => 0.0,
    }
}

/// `Σ_fire ln p + Σ_nofire ln(1 − p)`; missing records are skipped.
pub fn data_log_likelihood(t: &ScalarField, recs: &[DetectionRecord], cfg: &DetectionConfig) -> Result<f64> {
    cfg.validate()?;
    let mut sum = 0.0;
    for rec in recs {
        if rec.flag != DetectionFlag::Missing {
            sum += record_term(rec.flag, pixel_fire_prob(t, rec, cfg)?);
        }
    }
    Ok(sum)
}

/// Draws fire/no-fire flags for the given observations from the model.
pub fn sample_detections<R: Rng + ?Sized>(
    t: &ScalarField,
    observations: &[(f64, f64, f64)],
    half_width: f64,
    cfg: &DetectionConfig,
    rng: &mut R,
) -> Result<Vec<DetectionRecord>> {
    observations
        .iter()
        .map(|&(x, y, time)| {
            let mut rec = DetectionRecord { x, y, t: time, flag: DetectionFlag::NoFire, half_width };
            if rng.random_bool(pixel_fire_prob(t, &rec, cfg)?) {
                rec.flag = DetectionFlag::Fire;
            }
            Ok(rec)
        })
        .collect()
}

/// A candidate ignition point and time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IgnitionCandidate {
    pub x: f64,
    pub y: f64,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedCandidate {
    /// Position in the input list.
    pub index: usize,
    pub candidate: IgnitionCandidate,
    pub loglik: f64,
}

/// Arrival field of a fire started at `c`: fast marching from the nodes of
/// the containing cell, seeded with straight-line travel times.
pub fn ignition_field(ros: &RosModel, c: &IgnitionCandidate) -> Result<ScalarField> {
    let grid = ros.grid();
    if !(grid.contains(c.x, c.y) && c.t.is_finite()) {
        return Err(Error::OutOfDomain { x: c.x, y: c.y });
    }
    let rates = ros.node_field(c.t);
    let (i, u) = cell_coord((c.x - grid.x0) / grid.dx, grid.nx);
    let (j, v) = cell_coord((c.y - grid.y0) / grid.dy, grid.ny);
    let mut sources = Vec::with_capacity(4);
    for (di, dj) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
        let k = grid.index(i + di, j + dj);
        let dist = ((di as f64 - u) * grid.dx).hypot((dj as f64 - v) * grid.dy);
        sources.push((k, c.t + dist / rates.values()[k]));
    }
    fast_march(grid, &rates, &sources)
}

/// Scores every candidate by the log-likelihood of the detections under its
/// simulated arrival field. Sorted by descending score, ties by index.
pub fn ignition_search(
    candidates: &[IgnitionCandidate],
    recs: &[DetectionRecord],
    ros: &RosModel,
    cfg: &DetectionConfig,
) -> Result<Vec<RankedCandidate>> {
    cfg.validate()?;
    let mut ranked = candidates
        .par_iter()
        .enumerate()
        .map(|(index, c)| {
            let t = ignition_field(ros, c)?;
            Ok(RankedCandidate { index, candidate: *c, loglik: data_log_likelihood(&t, recs, cfg)? })
        })
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| b.loglik.total_cmp(&a.loglik).then(a.index.cmp(&b.index)));
    Ok(ranked)
}

/// Reads a detection CSV with header `x,y,t,flag`.
pub fn read_detections(path: &Path, half_width: f64) -> Result<Vec<DetectionRecord>> {
    let file = std::fs::File::open(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let parse_err = |e: csv::Error| Error::Parse(format!("{}: {e}", path.display()));
    let header = rdr.headers().map_err(parse_err)?;
    if header.iter().collect::<Vec<_>>() != ["x", "y", "t", "flag"] {
        return Err(Error::Parse(format!("{}: expected header x,y,t,flag", path.display())));
    }
    let mut out = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row.map_err(parse_err)?;
        let num = |i: usize| -> Result<f64> {
            row[i].parse().map_err(|_| Error::Parse(format!("{}: row {}: bad number {:?}", path.display(), line + 1, &row[i])))
        };
        out.push(DetectionRecord { x: num(0)?, y: num(1)?, t: num(2)?, flag: row[3].parse()?, half_width });
    }
    Ok(out)
}

pub fn write_detections(path: &Path, recs: &[DetectionRecord]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "x,y,t,flag")?;
    for r in recs {
        writeln!(w, "{:.16e},{:.16e},{:.16e},{}", r.x, r.y, r.t, r.flag.as_str())?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `rank,x,y,t,loglik` with ranks starting at 1.
pub fn write_ranking(path: &Path, ranked: &[RankedCandidate]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "rank,x,y,t,loglik")?;
    for (r, c) in ranked.iter().enumerate() {
        let c0 = c.candidate;
        writeln!(w, "{},{:.16e},{:.16e},{:.16e},{:.16e}", r + 1, c0.x, c0.y, c0.t, c.loglik)?;
    }
    w.flush()?;
    Ok(())
}

/// `J(T) − λ · log-likelihood`, evaluated incrementally like the residual
/// cost so it can drive the same descent.
pub struct CombinedObjective<'a> {
    residual: IncrementalObjective<'a>,
    lambda: f64,
    cfg: DetectionConfig,
    recs: Vec<DetectionRecord>,
    kernels: Vec<Vec<(usize, f64)>>,
    /// CSR map from node to the records whose kernel covers it.
    node_ptr: Vec<usize>,
    node_recs: Vec<usize>,
    ll_tree: SumTree,
    current: f64,
    dir: Vec<f64>,
    dir_support: Vec<usize>,
    affected: Vec<usize>,
    mark: Vec<bool>,
    new_terms: Vec<f64>,
    old_terms: Vec<f64>,
}

impl<'a> CombinedObjective<'a> {
    pub fn new(
        residual: IncrementalObjective<'a>,
        recs: Vec<DetectionRecord>,
        cfg: DetectionConfig,
        lambda: f64,
        t: &[f64],
    ) -> Result<Self> {
        cfg.validate()?;
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("likelihood weight must be >= 0, got {lambda}")));
        }
        let grid = *residual.objective().grid();
        let kernels = recs
            .iter()
            .map(|r| {
                if r.flag == DetectionFlag::Missing {
                    Ok(Vec::new())
                } else {
                    kernel_weights(&grid, r.x, r.y, cfg.sigma)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let n = grid.len();
        let mut node_ptr = vec![0usize; n + 1];
        for kern in &kernels {
            for &(k, _) in kern {
                node_ptr[k + 1] += 1;
            }
        }
        for k in 0..n {
            node_ptr[k + 1] += node_ptr[k];
        }
        let mut fill = node_ptr.clone();
        let mut node_recs = vec![0usize; node_ptr[n]];
        for (r, kern) in kernels.iter().enumerate() {
            for &(k, _) in kern {
                node_recs[fill[k]] = r;
                fill[k] += 1;
            }
        }
        let mut me = Self {
            residual,
            lambda,
            cfg,
            recs,
            kernels,
            node_ptr,
            node_recs,
            ll_tree: SumTree::new(&[]),
            current: 0.0,
            dir: vec![0.0; n],
            dir_support: Vec::new(),
            affected: Vec::new(),
            mark: Vec::new(),
            new_terms: Vec::new(),
            old_terms: Vec::new(),
        };
        me.mark = vec![false; me.recs.len()];
        me.reset(t);
        Ok(me)
    }

    fn term(&self, r: usize, arrival: impl Fn(usize) -> f64) -> f64 {
        let rec = &self.recs[r];
        if rec.flag == DetectionFlag::Missing {
            return 0.0;
        }
        record_term(rec.flag, weighted_prob(&self.kernels[r], arrival, rec.t, &self.cfg))
    }

    pub fn log_likelihood(&self) -> f64 {
        self.ll_tree.total()
    }

    fn compute_terms(&mut self, t: &[f64], step: f64) {
        self.new_terms.clear();
        for i in 0..self.affected.len() {
            let r = self.affected[i];
            let dir = &self.dir;
            let v = self.term(r, |k| t[k] + step * dir[k]);
            self.new_terms.push(v);
        }
    }
}

impl DescentObjective for CombinedObjective<'_> {
    fn reset(&mut self, t: &[f64]) -> f64 {
        let j = self.residual.reset(t);
        let terms: Vec<f64> = (0..self.recs.len()).map(|r| self.term(r, |k| t[k])).collect();
        self.ll_tree = SumTree::new(&terms);
        self.current = j - self.lambda * self.ll_tree.total();
        self.current
    }

    fn value(&self) -> f64 {
        self.current
    }

    fn set_direction(&mut self, d: &SparseVec) {
        self.residual.set_direction(d);
        for &k in &self.dir_support {
            self.dir[k] = 0.0;
        }
        self.dir_support.clear();
        self.affected.clear();
        for (k, v) in d.iter() {
            self.dir[k] = v;
            self.dir_support.push(k);
            for &r in &self.node_recs[self.node_ptr[k]..self.node_ptr[k + 1]] {
                if !self.mark[r] {
                    self.mark[r] = true;
                    self.affected.push(r);
                }
            }
        }
        self.affected.sort_unstable();
        for &r in &self.affected {
            self.mark[r] = false;
        }
    }

    fn trial(&mut self, t: &[f64], step: f64) -> f64 {
        if step == 0.0 {
            return self.current;
        }
        let j = self.residual.trial(t, step);
        self.compute_terms(t, step);
        self.old_terms.clear();
        self.old_terms.extend(self.affected.iter().map(|&r| self.ll_tree.leaf(r)));
        self.ll_tree.update_sorted(&self.affected, &self.new_terms);
        let ll = self.ll_tree.total();
        self.ll_tree.update_sorted(&self.affected, &self.old_terms);
        j - self.lambda * ll
    }

    fn commit(&mut self, t: &[f64]) -> f64 {
        let j = self.residual.commit(t);
        self.compute_terms(t, 0.0);
        self.ll_tree.update_sorted(&self.affected, &self.new_terms);
        self.current = j - self.lambda * self.ll_tree.total();
        self.current
    }
}
