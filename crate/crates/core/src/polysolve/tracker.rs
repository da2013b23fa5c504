//! Predictor-corrector tracking of a single homotopy path.
//!
//! The homotopy is `H(x, t) = (1 - t) * gamma * G(x) + t * F(x)` for a start
//! system `G` and a target `F`. Each step takes an Euler predictor along the
//! tangent `dx/dt = -H_x^{-1} H_t` and corrects with a few Newton iterations at
//! the new `t`. The step in `t` halves on a failed correction and grows by 1.5x
//! after two consecutive successes.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::{SquareSystem, TrackConfig};

/// Relative Newton update size accepted by the corrector during tracking.
const CORRECTOR_TOL: f64 = 1e-9;
/// Once `1 - t` drops below this, the step floor is relaxed by a factor 10.
const ENDGAME_START: f64 = 0.05;
/// Hard bound on accepted plus rejected steps per path.
const MAX_STEPS: usize = 200_000;

/// One accepted step of a tracked path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub t: f64,
    pub step: f64,
    pub norm_x: f64,
}

/// How a path ended.
#[derive(Debug, Clone, PartialEq)]
pub enum PathOutcome {
    /// Reached `t = 1` and polished to a root.
    Converged { point: Vec<Complex64>, residual: f64 },
    /// `|x|` exceeded the infinity threshold at parameter `t`.
    Diverged { t: f64, norm: f64 },
    /// Step size underflow, singular Jacobian at the end, or residual too
    /// large after polishing.
    Failed { t: f64, reason: FailReason },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailReason {
    StepUnderflow,
    StepLimit,
    SingularEndpoint,
    Residual,
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathResult {
    pub index: usize,
    pub outcome: PathOutcome,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub trace: Vec<TracePoint>,
}

struct Homotopy<'a, F: ?Sized, G: ?Sized> {
    target: &'a F,
    start: &'a G,
    gamma: Complex64,
    n: usize,
}

impl<F, G> Homotopy<'_, F, G>
where
    F: SquareSystem + ?Sized,
    G: SquareSystem + ?Sized,
{
    fn value(&self, x: &[Complex64], t: f64) -> DVector<Complex64> {
        let mut f = vec![Complex64::new(0.0, 0.0); self.n];
        let mut g = vec![Complex64::new(0.0, 0.0); self.n];
        self.target.eval_into(x, &mut f);
        if t == 1.0 {
            return DVector::from_vec(f);
        }
        self.start.eval_into(x, &mut g);
        let gs = self.gamma * (1.0 - t);
        DVector::from_iterator(self.n, f.iter().zip(&g).map(|(fi, gi)| gs * gi + fi * t))
    }

    fn jac_x(&self, x: &[Complex64], t: f64) -> DMatrix<Complex64> {
        let mut jf = DMatrix::zeros(self.n, self.n);
        self.target.jacobian_into(x, &mut jf);
        if t == 1.0 {
            return jf;
        }
        let mut jg = DMatrix::zeros(self.n, self.n);
        self.start.jacobian_into(x, &mut jg);
        jg * (self.gamma * (1.0 - t)) + jf * Complex64::new(t, 0.0)
    }

    /// `dH/dt = F(x) - gamma * G(x)`.
    fn d_t(&self, x: &[Complex64]) -> DVector<Complex64> {
        let mut f = vec![Complex64::new(0.0, 0.0); self.n];
        let mut g = vec![Complex64::new(0.0, 0.0); self.n];
        self.target.eval_into(x, &mut f);
        self.start.eval_into(x, &mut g);
        DVector::from_iterator(self.n, f.iter().zip(&g).map(|(fi, gi)| fi - self.gamma * gi))
    }
}

fn norm(x: &[Complex64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

fn finite(v: &DVector<Complex64>) -> bool {
    v.iter().all(|c| c.re.is_finite() && c.im.is_finite())
}

fn solve_linear(j: DMatrix<Complex64>, rhs: &DVector<Complex64>) -> Option<DVector<Complex64>> {
    let sol = j.lu().solve(rhs)?;
    finite(&sol).then_some(sol)
}

/// Newton iterations at fixed `t`. Succeeds once the update is below
/// `tol * (1 + |x|)`; fails on a singular Jacobian, a non-contracting update,
/// or running out of iterations.
fn newton<F, G>(
    h: &Homotopy<'_, F, G>,
    x: &mut Vec<Complex64>,
    t: f64,
    tol: f64,
    max_iters: usize,
    require_contraction: bool,
) -> bool
where
    F: SquareSystem + ?Sized,
    G: SquareSystem + ?Sized,
{
    let mut prev = f64::INFINITY;
    for _ in 0..max_iters {
        let rhs = -h.value(x, t);
        let Some(dx) = solve_linear(h.jac_x(x, t), &rhs) else {
            return false;
        };
        let size = dx.norm();
        for (xi, d) in x.iter_mut().zip(dx.iter()) {
            *xi += d;
        }
        if size <= tol * (1.0 + norm(x)) {
            return true;
        }
        if require_contraction && size > 0.5 * prev {
            return false;
        }
        prev = size;
    }
    false
}

/// Tracks one path from `start_point` (a root of `start`) at `t = 0` to
/// `t = 1`.
pub fn track_path<F, G>(
    target: &F,
    start: &G,
    start_point: &[Complex64],
    gamma: Complex64,
    cfg: &TrackConfig,
) -> PathResult
where
    F: SquareSystem + ?Sized,
    G: SquareSystem + ?Sized,
{
    track_path_indexed(0, target, start, start_point, gamma, cfg)
}

pub(crate) fn track_path_indexed<F, G>(
    index: usize,
    target: &F,
    start: &G,
    start_point: &[Complex64],
    gamma: Complex64,
    cfg: &TrackConfig,
) -> PathResult
where
    F: SquareSystem + ?Sized,
    G: SquareSystem + ?Sized,
{
    let hom = Homotopy {
        target,
        start,
        gamma,
        n: target.dim(),
    };
    let mut x = start_point.to_vec();
    let mut t = 0.0_f64;
    let mut step = cfg.initial_step;
    let mut streak = 0usize;
    let mut accepted = 0usize;
    let mut rejected = 0usize;
    let mut trace = Vec::new();
    if cfg.record_trace {
        trace.push(TracePoint {
            t,
            step,
            norm_x: norm(&x),
        });
    }

    let result = |outcome, accepted, rejected, trace| PathResult {
        index,
        outcome,
        accepted_steps: accepted,
        rejected_steps: rejected,
        trace,
    };

    while t < 1.0 {
        if accepted + rejected >= MAX_STEPS {
            return result(
                PathOutcome::Failed {
                    t,
                    reason: FailReason::StepLimit,
                },
                accepted,
                rejected,
                trace,
            );
        }
        let floor = if 1.0 - t < ENDGAME_START {
            cfg.min_step / 10.0
        } else {
            cfg.min_step
        };
        let remaining = 1.0 - t;
        let h = step.min(remaining);
        let t_next = if h >= remaining { 1.0 } else { t + h };

        let predicted = solve_linear(hom.jac_x(&x, t), &(-hom.d_t(&x))).map(|v| {
            x.iter()
                .zip(v.iter())
                .map(|(xi, vi)| xi + vi * (t_next - t))
                .collect::<Vec<_>>()
        });
        let mut ok = false;
        let mut candidate = Vec::new();
        if let Some(p) = predicted {
            candidate = p;
            ok = newton(
                &hom,
                &mut candidate,
                t_next,
                CORRECTOR_TOL,
                cfg.corrector_max_failures,
                true,
            );
        }

        if ok {
            let nx = norm(&candidate);
            x = candidate;
            t = t_next;
            accepted += 1;
            if cfg.record_trace {
                trace.push(TracePoint { t, step: h, norm_x: nx });
            }
            if nx > cfg.infinity_threshold {
                return result(PathOutcome::Diverged { t, norm: nx }, accepted, rejected, trace);
            }
            streak += 1;
            if streak >= 2 {
                step = (step * 1.5).min(cfg.max_step);
                streak = 0;
            }
        } else {
            rejected += 1;
            streak = 0;
            step = h / 2.0;
            if step < floor {
                let nx = norm(&x);
                let outcome = if nx > cfg.infinity_threshold.sqrt() {
                    // stalled while already heading off to infinity
                    PathOutcome::Diverged { t, norm: nx }
                } else {
                    PathOutcome::Failed {
                        t,
                        reason: FailReason::StepUnderflow,
                    }
                };
                return result(outcome, accepted, rejected, trace);
            }
        }
    }

    // polish on the target itself
    let polished = newton(&hom, &mut x, 1.0, cfg.newton_tol, cfg.newton_max_iters, false);
    let mut f = vec![Complex64::new(0.0, 0.0); hom.n];
    target.eval_into(&x, &mut f);
    let residual = norm(&f);
    let outcome = if !residual.is_finite() || x.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
        PathOutcome::Failed {
            t,
            reason: FailReason::NonFinite,
        }
    } else if target.accepts(residual, cfg.newton_tol, polished) {
        PathOutcome::Converged { point: x, residual }
    } else if !polished {
        PathOutcome::Failed {
            t,
            reason: FailReason::SingularEndpoint,
        }
    } else {
        PathOutcome::Failed {
            t,
            reason: FailReason::Residual,
        }
    };
    result(outcome, accepted, rejected, trace)
}
