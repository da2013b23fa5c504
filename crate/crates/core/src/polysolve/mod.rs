//! All isolated complex roots of a square polynomial system by total-degree
//! homotopy continuation.
//!
//! A start system `x_k^{d_k} - 1` with `d_1 * ... * d_n` known roots is
//! deformed into the target along `(1 - t) gamma G + t F`, with `gamma` a
//! seeded random point on the unit circle. Every start root is tracked
//! independently; endpoints are canonically sorted and deduplicated so the
//! report does not depend on the order in which paths were scheduled.

mod closed_form;
mod start;
mod tracker;

use std::cmp::Ordering;
use std::f64::consts::TAU;
use std::io::{self, Write};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::powersum::{PowerSumSystem, MAX_N};

pub use closed_form::closed_form_small;
pub use start::{bezout_number, start_system, StartSystem, MAX_PATHS};
pub use tracker::{track_path, FailReason, PathOutcome, PathResult, TracePoint};

/// A square polynomial system presented through evaluation and Jacobian.
pub trait SquareSystem: Sync {
    fn dim(&self) -> usize;

    /// Total degree of each equation.
    fn degrees(&self) -> Vec<u32>;

    fn eval_into(&self, x: &[Complex64], out: &mut [Complex64]);

    fn jacobian_into(&self, x: &[Complex64], out: &mut DMatrix<Complex64>);

    /// Residual norms are judged relative to this (`1 + |F(0)|` by default).
    fn residual_scale(&self) -> f64 {
        let zero = vec![Complex64::new(0.0, 0.0); self.dim()];
        let mut f = vec![Complex64::new(0.0, 0.0); self.dim()];
        self.eval_into(&zero, &mut f);
        1.0 + f.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Whether a polished endpoint counts as a root. `polished` reports that
    /// the final Newton updates fell below the tolerance.
    fn accepts(&self, residual: f64, tol: f64, polished: bool) -> bool {
        let _ = polished;
        residual <= tol * self.residual_scale()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RootStatus {
    /// Endpoint of a path tracked with the configured step sizes.
    Converged,
    /// Endpoint recovered by retracking with tightened steps, or a
    /// closed-form root after Newton polishing.
    Refined,
}

impl RootStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RootStatus::Converged => "converged",
            RootStatus::Refined => "refined",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Root {
    pub point: Vec<Complex64>,
    pub residual: f64,
    pub status: RootStatus,
    pub path_index: usize,
}

impl Root {
    pub fn real_part(&self) -> Vec<f64> {
        self.point.iter().map(|v| v.re).collect()
    }

    pub fn max_imag(&self) -> f64 {
        self.point.iter().map(|v| v.im.abs()).fold(0.0, f64::max)
    }
}

/// Per-path trace, recorded when [`TrackConfig::record_trace`] is set.
#[derive(Debug, Clone, PartialEq)]
pub struct PathTrace {
    pub path: usize,
    pub points: Vec<TracePoint>,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub roots: Vec<Root>,
    pub paths_total: usize,
    pub paths_converged: usize,
    pub paths_diverged: usize,
    pub paths_failed: usize,
    pub gamma: Complex64,
    pub seed: u64,
    pub wall_time: Duration,
    pub traces: Vec<PathTrace>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackConfig {
    pub initial_step: f64,
    pub min_step: f64,
    pub max_step: f64,
    /// Final Newton polish tolerance; also the residual contract for roots.
    pub newton_tol: f64,
    pub newton_max_iters: usize,
    /// Newton iterations a corrector may spend before the step is rejected.
    pub corrector_max_failures: usize,
    pub infinity_threshold: f64,
    pub dedupe_tol: f64,
    pub seed: u64,
    pub record_trace: bool,
    /// Rounds of retracking for failed or colliding paths.
    pub retrack_rounds: usize,
    /// Track paths on the rayon pool instead of sequentially.
    pub parallel: bool,
}

impl Default for TrackConfig {
    fn default() -> Self {
        TrackConfig {
            initial_step: 0.05,
            min_step: 1e-10,
            max_step: 0.2,
            newton_tol: 1e-10,
            newton_max_iters: 10,
            corrector_max_failures: 3,
            infinity_threshold: 1e8,
            dedupe_tol: 1e-6,
            seed: 0,
            record_trace: false,
            retrack_rounds: 2,
            parallel: true,
        }
    }
}

impl TrackConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| v > 0.0 && v <= 1.0;
        if !(in_unit(self.initial_step) && in_unit(self.min_step) && in_unit(self.max_step)) {
            return Err(Error::invalid("step sizes must lie in (0, 1]"));
        }
        if !(self.min_step <= self.initial_step && self.initial_step <= self.max_step) {
            return Err(Error::invalid(
                "step sizes must satisfy min_step <= initial_step <= max_step",
            ));
        }
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !(positive(self.newton_tol)
            && positive(self.infinity_threshold)
            && positive(self.dedupe_tol))
        {
            return Err(Error::invalid("tolerances must be positive and finite"));
        }
        if self.newton_max_iters == 0 || self.corrector_max_failures == 0 {
            return Err(Error::invalid("iteration limits must be at least 1"));
        }
        Ok(())
    }

    fn tightened(&self, round: usize) -> TrackConfig {
        let factor = 8f64.powi(round as i32);
        TrackConfig {
            initial_step: (self.initial_step / factor).max(self.min_step),
            max_step: (self.max_step / factor).max(self.min_step),
            ..self.clone()
        }
    }
}

/// The gamma constant drawn from `seed`: `exp(2 pi i u)`, `u ~ U[0, 1)`.
pub fn gamma_for_seed(seed: u64) -> Complex64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u: f64 = rng.random();
    Complex64::from_polar(1.0, TAU * u)
}

fn point_norm(x: &[Complex64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

fn relative_distance(rep: &[Complex64], other: &[Complex64]) -> f64 {
    let diff = rep
        .iter()
        .zip(other)
        .map(|(a, b)| (a - b).norm_sqr())
        .sum::<f64>()
        .sqrt();
    diff / (1.0 + point_norm(rep))
}

fn canonical_key(x: &[Complex64]) -> Vec<f64> {
    const GRAIN: f64 = 1e-14;
    let q = |v: f64| (v / GRAIN).round();
    x.iter()
        .map(|v| q(v.re))
        .chain(x.iter().map(|v| q(v.im)))
        .collect()
}

fn canonical_cmp(a: &[Complex64], b: &[Complex64]) -> Ordering {
    let (ka, kb) = (canonical_key(a), canonical_key(b));
    for (x, y) in ka.iter().zip(&kb) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    Ordering::Equal
}

/// Indices of the kept representatives, in canonical order.
fn dedupe_indices(points: &[&[Complex64]], tol: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| canonical_cmp(points[i], points[j]));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept
            .iter()
            .all(|&k| relative_distance(points[k], points[i]) > tol)
        {
            kept.push(i);
        }
    }
    kept
}

/// Greedy clustering under `|u - v| / (1 + |u|)`: points are sorted
/// canonically (real parts, then imaginary parts) and each is kept unless it
/// lies within `tol` of an already kept representative.
pub fn dedupe_roots(roots: &[Vec<Complex64>], tol: f64) -> Result<Vec<Vec<Complex64>>> {
    if !(tol > 0.0) {
        return Err(Error::invalid("dedupe tolerance must be positive"));
    }
    let refs: Vec<&[Complex64]> = roots.iter().map(|r| r.as_slice()).collect();
    Ok(dedupe_indices(&refs, tol)
        .into_iter()
        .map(|i| roots[i].clone())
        .collect())
}

fn track_all<S: SquareSystem + ?Sized>(
    target: &S,
    cfg: &TrackConfig,
) -> Result<(Complex64, Vec<PathResult>, Vec<bool>)> {
    cfg.validate()?;
    let degrees = target.degrees();
    if degrees.len() != target.dim() {
        return Err(Error::invalid("one degree per equation is required"));
    }
    let (start, points) = start_system(&degrees)?;
    let gamma = gamma_for_seed(cfg.seed);

    let run = |cfg: &TrackConfig, idx: &[usize]| -> Vec<PathResult> {
        let one = |&i: &usize| tracker::track_path_indexed(i, target, &start, &points[i], gamma, cfg);
        if cfg.parallel {
            idx.par_iter().map(one).collect()
        } else {
            idx.iter().map(one).collect()
        }
    };

    let all: Vec<usize> = (0..points.len()).collect();
    let mut results = run(cfg, &all);
    let mut retracked = vec![false; results.len()];

    for round in 1..=cfg.retrack_rounds {
        let suspicious = suspicious_paths(&results, cfg.dedupe_tol);
        if suspicious.is_empty() {
            break;
        }
        let tight = cfg.tightened(round);
        for r in run(&tight, &suspicious) {
            retracked[r.index] = true;
            let i = r.index;
            results[i] = r;
        }
    }
    Ok((gamma, results, retracked))
}

/// Failed paths and converged paths whose endpoint collides with another
/// path's endpoint. For generic targets all roots are simple, so a collision
/// signals path jumping.
fn suspicious_paths(results: &[PathResult], tol: f64) -> Vec<usize> {
    let mut out = Vec::new();
    let converged: Vec<(usize, &[Complex64])> = results
        .iter()
        .filter_map(|r| match &r.outcome {
            PathOutcome::Converged { point, .. } => Some((r.index, point.as_slice())),
            _ => None,
        })
        .collect();
    for r in results {
        match &r.outcome {
            PathOutcome::Failed { .. } => out.push(r.index),
            PathOutcome::Converged { point, .. } => {
                let collides = converged.iter().any(|&(j, p)| {
                    j != r.index
                        && (relative_distance(p, point) <= tol
                            || relative_distance(point, p) <= tol)
                });
                if collides {
                    out.push(r.index);
                }
            }
            PathOutcome::Diverged { .. } => {}
        }
    }
    out
}

fn finish(
    results: Vec<PathResult>,
    retracked: Vec<bool>,
    gamma: Complex64,
    cfg: &TrackConfig,
    started: Instant,
    mut accept: impl FnMut(&[Complex64]) -> Option<(Vec<Complex64>, f64)>,
) -> SolveReport {
    let paths_total = results.len();
    let (mut converged, mut diverged, mut failed) = (0, 0, 0);
    let mut candidates: Vec<Root> = Vec::new();
    let mut traces = Vec::new();
    for r in results {
        match &r.outcome {
            PathOutcome::Converged { point, .. } => match accept(point) {
                Some((point, residual)) => {
                    converged += 1;
                    candidates.push(Root {
                        point,
                        residual,
                        status: if retracked[r.index] {
                            RootStatus::Refined
                        } else {
                            RootStatus::Converged
                        },
                        path_index: r.index,
                    });
                }
                None => failed += 1,
            },
            PathOutcome::Diverged { .. } => diverged += 1,
            PathOutcome::Failed { .. } => failed += 1,
        }
        if cfg.record_trace {
            traces.push(PathTrace {
                path: r.index,
                points: r.trace,
            });
        }
    }
    let refs: Vec<&[Complex64]> = candidates.iter().map(|r| r.point.as_slice()).collect();
    let keep = dedupe_indices(&refs, cfg.dedupe_tol);
    let roots = keep.into_iter().map(|i| candidates[i].clone()).collect();
    SolveReport {
        roots,
        paths_total,
        paths_converged: converged,
        paths_diverged: diverged,
        paths_failed: failed,
        gamma,
        seed: cfg.seed,
        wall_time: started.elapsed(),
        traces,
    }
}

/// Tracks all total-degree paths of `target` and returns the deduplicated
/// endpoints. Individual path failures are counted, never raised.
pub fn solve<S: SquareSystem + ?Sized>(target: &S, cfg: &TrackConfig) -> Result<SolveReport> {
    let started = Instant::now();
    let (gamma, results, retracked) = track_all(target, cfg)?;
    let n = target.dim();
    Ok(finish(results, retracked, gamma, cfg, started, |p| {
        let mut f = vec![Complex64::new(0.0, 0.0); n];
        target.eval_into(p, &mut f);
        Some((p.to_vec(), point_norm(&f)))
    }))
}

/// Solves a power-sum system. Tracking runs on the normalized, moment-compressed
/// form; endpoints are mapped back and checked against the residual contract
/// `|f(x)| <= newton_tol * (1 + |c|)` on the original system, after a Newton
/// polish on that system when the mapped point misses it.
pub fn solve_power_sum(system: &PowerSumSystem, cfg: &TrackConfig) -> Result<SolveReport> {
    if system.n() > MAX_N {
        return Err(Error::DimensionCap {
            n: system.n(),
            max: MAX_N,
        });
    }
    let started = Instant::now();
    let (normalized, map) = system.normalized();
    let compressed = normalized.compress();
    let (gamma, results, retracked) = track_all(&compressed, cfg)?;
    let bound = residual_bound(system, cfg.newton_tol);
    Ok(finish(results, retracked, gamma, cfg, started, |w| {
        let mut x = map.to_original(w);
        let mut residual = point_norm(&system.evaluate(&x).ok()?);
        if residual > bound {
            residual = polish(system, &mut x, cfg.newton_max_iters);
        }
        (residual <= bound).then_some((x, residual))
    }))
}

/// The residual contract `newton_tol * (1 + |c|)` for a power-sum system.
pub fn residual_bound(system: &PowerSumSystem, newton_tol: f64) -> f64 {
    newton_tol * (1.0 + crate::linalg::norm(system.constants()))
}

/// Newton iterations on the implicit system, keeping the best iterate.
/// Returns its residual norm.
pub(crate) fn polish(system: &PowerSumSystem, x: &mut Vec<Complex64>, iters: usize) -> f64 {
    let residual_at = |p: &[Complex64]| {
        system
            .evaluate(p)
            .map(|f| point_norm(&f))
            .unwrap_or(f64::INFINITY)
    };
    let mut best = residual_at(x);
    let mut current = x.clone();
    for _ in 0..iters {
        let (Ok(f), Ok(j)) = (system.evaluate(&current), system.jacobian(&current)) else {
            break;
        };
        let rhs = -nalgebra::DVector::from_vec(f);
        let Some(dx) = j.lu().solve(&rhs) else {
            break;
        };
        if dx.iter().any(|d| !(d.re.is_finite() && d.im.is_finite())) {
            break;
        }
        for (c, d) in current.iter_mut().zip(dx.iter()) {
            *c += d;
        }
        let r = residual_at(&current);
        if r < best {
            best = r;
            x.clone_from(&current);
        }
        if dx.norm() <= 1e-15 * (1.0 + point_norm(&current)) {
            break;
        }
    }
    best
}

/// Writes per-path traces as CSV with header `path,t,step,norm_x`.
pub fn write_trace_csv<W: Write>(traces: &[PathTrace], mut out: W) -> io::Result<()> {
    writeln!(out, "path,t,step,norm_x")?;
    for tr in traces {
        for p in &tr.points {
            writeln!(out, "{},{},{},{}", tr.path, p.t, p.step, p.norm_x)?;
        }
    }
    Ok(())
}
