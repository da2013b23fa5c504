//! Root selection, alternating minimization, and the brute-force MLE.
//!
//! Permutations are dense index arrays: `perm[i] = j` means observation
//! `y[j]` is matched to row `i` of the design matrix, i.e. the permuted
//! vector is `(y[perm[0]], ..., y[perm[m-1]])`.

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, LeastSquares};
use crate::polysolve::{closed_form_small, solve_power_sum, Root, TrackConfig};
use crate::powersum::{build_system, RegressionInstance, MAX_N};

/// Largest `m` accepted by [`brute_force_mle`].
pub const MAX_BRUTE_FORCE_M: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitSource {
    Algebraic,
    LeastSquares,
    External,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult {
    pub xi: Vec<f64>,
    pub perm: Vec<usize>,
    /// Final `|y[perm] - A xi|`.
    pub objective: f64,
    /// Objective after initialization and after every accepted sweep.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub init_point: Vec<f64>,
    pub init_source: InitSource,
    /// Roots the initialization was chosen from (empty unless algebraic).
    pub roots: Vec<Root>,
    pub solver_time: Duration,
    pub em_time: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    /// Maximum number of sweeps `T`.
    pub max_iters: usize,
    /// Relative decrease `eps` below which the alternation stops.
    pub eps: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iters: 100,
            eps: 0.01,
        }
    }
}

impl EmConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::invalid("EM needs at least one iteration"));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(Error::invalid("EM accuracy must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AiEmConfig {
    pub em: EmConfig,
    pub solver: TrackConfig,
}

/// Ascending order of `values`, ties broken by index.
fn argsort(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[i].total_cmp(&values[j]).then(i.cmp(&j)));
    idx
}

fn apply_perm(y: &[f64], perm: &[usize]) -> Vec<f64> {
    perm.iter().map(|&j| y[j]).collect()
}

fn residual(y: &[f64], perm: &[usize], v: &[f64]) -> f64 {
    perm.iter()
        .zip(v)
        .map(|(&j, vi)| (y[j] - vi).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Observations with their sort order cached; matching against a new `v`
/// only sorts `v`.
struct SortedObservations<'a> {
    y: &'a [f64],
    order: Vec<usize>,
}

impl<'a> SortedObservations<'a> {
    fn new(y: &'a [f64]) -> Self {
        SortedObservations {
            y,
            order: argsort(y),
        }
    }

    fn matching(&self, v: &[f64]) -> (Vec<usize>, f64) {
        let v_order = argsort(v);
        let mut perm = vec![0; v.len()];
        for (&row, &obs) in v_order.iter().zip(&self.order) {
            perm[row] = obs;
        }
        let r = residual(self.y, &perm, v);
        (perm, r)
    }
}

/// The permutation minimizing `|y[perm] - v|`: the `r`-th smallest
/// observation is matched to the `r`-th smallest entry of `v`.
pub fn best_permutation(y: &[f64], v: &[f64]) -> Result<(Vec<usize>, f64)> {
    if y.len() != v.len() {
        return Err(Error::invalid(format!(
            "cannot match {} observations against {} predictions",
            y.len(),
            v.len()
        )));
    }
    Ok(SortedObservations::new(y).matching(v))
}

/// Picks the root whose real part admits the smallest matched residual.
/// Ties go to the earliest root.
pub fn algebraic_init(
    roots: &[Root],
    a: &DMatrix<f64>,
    y: &[f64],
) -> Result<(Vec<f64>, Vec<usize>, f64)> {
    if roots.is_empty() {
        return Err(Error::invalid("no roots to select from"));
    }
    if a.nrows() != y.len() {
        return Err(Error::invalid("design matrix and observations disagree in length"));
    }
    let sorted = SortedObservations::new(y);
    let mut best: Option<(Vec<f64>, Vec<usize>, f64)> = None;
    for root in roots {
        if root.point.len() != a.ncols() {
            return Err(Error::invalid("root dimension does not match the design matrix"));
        }
        let xi = root.real_part();
        let (perm, r) = sorted.matching(&linalg::mat_vec(a, &xi));
        if best.as_ref().is_none_or(|b| r < b.2) {
            best = Some((xi, perm, r));
        }
    }
    Ok(best.expect("roots is nonempty"))
}

/// Alternating minimization from `xi0`: least squares for the coefficients
/// given the matching, then re-matching by sorting, until the objective
/// decreases by no more than `eps` times its current value or `max_iters`
/// sweeps have run.
pub fn em_refine(
    a: &DMatrix<f64>,
    y: &[f64],
    xi0: &[f64],
    cfg: &EmConfig,
) -> Result<EstimationResult> {
    let ls = LeastSquares::new(a)?;
    em_refine_with(&ls, a, y, xi0, cfg, InitSource::External)
}

fn em_refine_with(
    ls: &LeastSquares,
    a: &DMatrix<f64>,
    y: &[f64],
    xi0: &[f64],
    cfg: &EmConfig,
    init_source: InitSource,
) -> Result<EstimationResult> {
    cfg.validate()?;
    if y.len() != a.nrows() {
        return Err(Error::invalid(format!(
            "observation vector has length {} but the design matrix has {} rows",
            y.len(),
            a.nrows()
        )));
    }
    if xi0.len() != a.ncols() {
        return Err(Error::invalid("initial point has the wrong dimension"));
    }
    let started = Instant::now();
    let sorted = SortedObservations::new(y);
    // an objective this small is zero up to rounding
    let floor = 64.0 * f64::EPSILON * linalg::norm(y);

    let mut xi = xi0.to_vec();
    let (mut perm, mut objective) = sorted.matching(&linalg::mat_vec(a, &xi));
    let mut trace = vec![objective];
    let mut decrease = f64::INFINITY;
    let mut t = 0;
    while t < cfg.max_iters && (t == 0 || (decrease > cfg.eps * objective && objective > floor)) {
        t += 1;
        let next_xi = ls.solve(&apply_perm(y, &perm)).as_slice().to_vec();
        let (next_perm, next_obj) = sorted.matching(&linalg::mat_vec(a, &next_xi));
        if next_obj > objective {
            // rounding-level increase at a fixed point
            break;
        }
        decrease = objective - next_obj;
        objective = next_obj;
        xi = next_xi;
        perm = next_perm;
        trace.push(objective);
    }
    Ok(EstimationResult {
        xi,
        perm,
        objective,
        objective_trace: trace,
        iterations: t,
        init_point: xi0.to_vec(),
        init_source,
        roots: Vec::new(),
        solver_time: Duration::ZERO,
        em_time: started.elapsed(),
    })
}

/// Algebraically initialized alternating minimization: solve the power-sum
/// system, start from the best real root, refine.
pub fn ai_em(a: &DMatrix<f64>, y: &[f64], cfg: &AiEmConfig) -> Result<EstimationResult> {
    cfg.em.validate()?;
    let n = a.ncols();
    if n > MAX_N {
        return Err(Error::DimensionCap { n, max: MAX_N });
    }
    let instance = RegressionInstance::new(a.clone(), y.to_vec())?;
    let started = Instant::now();
    let system = build_system(&instance)?;
    let roots = if n <= 2 {
        closed_form_small(&system)?
    } else {
        let report = solve_power_sum(&system, &cfg.solver)?;
        if report.roots.is_empty() {
            return Err(Error::NoRoots {
                paths_total: report.paths_total,
                paths_diverged: report.paths_diverged,
                paths_failed: report.paths_failed,
            });
        }
        report.roots
    };
    let (xi0, _, _) = algebraic_init(&roots, a, y)?;
    let solver_time = started.elapsed();

    let ls = LeastSquares::new(a)?;
    let mut result = em_refine_with(&ls, a, y, &xi0, &cfg.em, InitSource::Algebraic)?;
    result.roots = roots;
    result.solver_time = solver_time;
    Ok(result)
}

/// Alternating minimization started from the ordinary least-squares fit that
/// ignores the shuffle.
pub fn ls_init_em(a: &DMatrix<f64>, y: &[f64], cfg: &EmConfig) -> Result<EstimationResult> {
    if y.len() != a.nrows() {
        return Err(Error::invalid(format!(
            "observation vector has length {} but the design matrix has {} rows",
            y.len(),
            a.nrows()
        )));
    }
    let ls = LeastSquares::new(a)?;
    let xi0 = ls.solve(y).as_slice().to_vec();
    em_refine_with(&ls, a, y, &xi0, cfg, InitSource::LeastSquares)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleResult {
    pub perm: Vec<usize>,
    pub xi: Vec<f64>,
    pub objective: f64,
}

/// Rearranges `p` into the next permutation in lexicographic order; false
/// once `p` is the last one.
fn next_permutation(p: &mut [usize]) -> bool {
    let Some(i) = (1..p.len()).rev().find(|&i| p[i - 1] < p[i]) else {
        return false;
    };
    let j = (i..p.len()).rev().find(|&j| p[j] > p[i - 1]).expect("pivot exists");
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

fn for_each_permutation(m: usize, mut f: impl FnMut(&[usize])) {
    let mut p: Vec<usize> = (0..m).collect();
    loop {
        f(&p);
        if !next_permutation(&mut p) {
            break;
        }
    }
}

fn brute_force_setup(a: &DMatrix<f64>, y: &[f64]) -> Result<LeastSquares> {
    let m = y.len();
    if m != a.nrows() {
        return Err(Error::invalid(format!(
            "observation vector has length {m} but the design matrix has {} rows",
            a.nrows()
        )));
    }
    if m > MAX_BRUTE_FORCE_M {
        return Err(Error::TooLarge {
            m,
            max: MAX_BRUTE_FORCE_M,
        });
    }
    if m == 0 {
        return Err(Error::invalid("no observations"));
    }
    LeastSquares::new(a)
}

/// Global minimizer of `|y[perm] - A x|` over all `m!` permutations.
pub fn brute_force_mle(a: &DMatrix<f64>, y: &[f64]) -> Result<MleResult> {
    let ls = brute_force_setup(a, y)?;
    let mut best: Option<MleResult> = None;
    for_each_permutation(y.len(), |p| {
        let b = apply_perm(y, p);
        let xi = ls.solve(&b);
        let r = residual(y, p, linalg::mat_vec(a, xi.as_slice()).as_slice());
        if best.as_ref().is_none_or(|bst| r < bst.objective) {
            best = Some(MleResult {
                perm: p.to_vec(),
                xi: xi.as_slice().to_vec(),
                objective: r,
            });
        }
    });
    Ok(best.expect("at least one permutation"))
}

/// Number of permutations for which `y[perm] = A x` is solvable, i.e. the
/// least-squares residual is at most `tol * max(1, |y|)`.
pub fn count_consistent_permutations(a: &DMatrix<f64>, y: &[f64], tol: f64) -> Result<usize> {
    let ls = brute_force_setup(a, y)?;
    let bound = tol * linalg::norm(y).max(1.0);
    let mut count = 0;
    for_each_permutation(y.len(), |p| {
        let b = apply_perm(y, p);
        let xi = ls.solve(&b);
        if residual(y, p, linalg::mat_vec(a, xi.as_slice()).as_slice()) <= bound {
            count += 1;
        }
    });
    Ok(count)
}
