//! Synthetic instances, error metrics and seeded Monte-Carlo benchmarks.
//!
//! Instances follow the usual shuffled-regression model: `A` and `xi*` are
//! standard normal, a subset of the entries of `A xi*` is permuted uniformly
//! at random, and i.i.d. Gaussian noise is added.
//!
//! Randomness comes from ChaCha8 seeded with the trial seed. Independent
//! streams of that generator drive each ingredient:
//!
//! | stream | draws                                          |
//! |--------|------------------------------------------------|
//! | 0      | `A`, row-major                                  |
//! | 1      | `xi*`                                           |
//! | 2      | shuffled subset, then its permutation           |
//! | 3      | unit-variance noise, scaled by `sigma` afterwards |
//!
//! so changing `sigma` alone leaves `A`, `xi*`, the permutation and the noise
//! direction untouched.

use std::io::{self, Write};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{
    ai_em, brute_force_mle, ls_init_em, AiEmConfig, EmConfig, MAX_BRUTE_FORCE_M,
};
use crate::linalg;
use crate::polysolve::{Root, TrackConfig};
use crate::powersum::{GroundTruth, RegressionInstance, MAX_N};

const STREAM_A: u64 = 0;
const STREAM_XI: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_NOISE: u64 = 3;

/// Noise level given either directly or as a signal-to-noise ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseLevel {
    Sigma(f64),
    SnrDb(f64),
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Noise standard deviation for a target SNR, using the realized per-sample
/// signal power `|A xi*|^2 / m`.
pub fn snr_to_sigma(a: &DMatrix<f64>, xi_star: &[f64], snr_db: f64) -> Result<f64> {
    if !snr_db.is_finite() {
        return Err(Error::invalid("SNR must be finite"));
    }
    if xi_star.len() != a.ncols() {
        return Err(Error::invalid("coefficient vector has the wrong dimension"));
    }
    let signal = linalg::mat_vec(a, xi_star);
    let power = signal.iter().map(|v| v * v).sum::<f64>() / a.nrows() as f64;
    if !(power > 0.0) {
        return Err(Error::invalid("zero signal power"));
    }
    Ok((power / 10f64.powf(snr_db / 10.0)).sqrt())
}

/// Draws a synthetic instance with full ground truth. Deterministic in
/// `seed`.
pub fn generate_instance(
    n: usize,
    m: usize,
    noise: NoiseLevel,
    shuffle_fraction: f64,
    seed: u64,
) -> Result<RegressionInstance> {
    if n == 0 || m <= n {
        return Err(Error::invalid(format!(
            "need m > n >= 1, got m = {m}, n = {n}"
        )));
    }
    if !(0.0..=1.0).contains(&shuffle_fraction) {
        return Err(Error::invalid(format!(
            "shuffle fraction must lie in [0, 1], got {shuffle_fraction}"
        )));
    }
    if let NoiseLevel::Sigma(s) = noise {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(Error::invalid(format!("sigma must be >= 0, got {s}")));
        }
    }

    let mut rng = stream(seed, STREAM_A);
    let a = DMatrix::from_row_iterator(
        m,
        n,
        (0..m * n).map(|_| StandardNormal.sample(&mut rng)),
    );
    let mut rng = stream(seed, STREAM_XI);
    let xi_star: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let signal = linalg::mat_vec(&a, &xi_star);

    let mut rng = stream(seed, STREAM_SHUFFLE);
    let count = ((shuffle_fraction * m as f64).ceil() as usize).min(m);
    let mut subset = rand::seq::index::sample(&mut rng, m, count).into_vec();
    subset.sort_unstable();
    let mut source = subset.clone();
    source.shuffle(&mut rng);
    let mut y = signal.clone();
    let mut pi_star: Vec<usize> = (0..m).collect();
    for (&pos, &row) in subset.iter().zip(&source) {
        y[pos] = signal[row];
        pi_star[row] = pos;
    }

    let (sigma, snr_db) = match noise {
        NoiseLevel::Sigma(s) => (s, None),
        NoiseLevel::SnrDb(db) => (snr_to_sigma(&a, &xi_star, db)?, Some(db)),
    };
    if sigma > 0.0 {
        let mut rng = stream(seed, STREAM_NOISE);
        for v in y.iter_mut() {
            let e: f64 = StandardNormal.sample(&mut rng);
            *v += sigma * e;
        }
    }

    let truth = GroundTruth {
        xi_star,
        pi_star,
        sigma,
        shuffle_fraction,
        seed,
        snr_db,
    };
    Ok(RegressionInstance::new(a, y)?.with_ground_truth(truth))
}

/// `100 |xi* - xi_hat| / |xi*|`.
pub fn relative_error(xi_star: &[f64], xi_hat: &[f64]) -> Result<f64> {
    if xi_star.len() != xi_hat.len() {
        return Err(Error::invalid("vectors differ in length"));
    }
    let denom = linalg::norm(xi_star);
    if !(denom > 0.0) {
        return Err(Error::invalid("reference vector is zero"));
    }
    let diff: Vec<f64> = xi_star.iter().zip(xi_hat).map(|(a, b)| a - b).collect();
    Ok(100.0 * linalg::norm(&diff) / denom)
}

/// The real part of the root closest to `xi*`, and its relative error. This
/// uses the ground truth and is only a diagnostic.
pub fn best_root_error(roots: &[Root], xi_star: &[f64]) -> Result<(Vec<f64>, f64)> {
    let mut best: Option<(Vec<f64>, f64)> = None;
    for root in roots {
        let re = root.real_part();
        let err = relative_error(xi_star, &re)?;
        if best.as_ref().is_none_or(|b| err < b.1) {
            best = Some((re, err));
        }
    }
    best.ok_or_else(|| Error::invalid("no roots"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    AiEm,
    LsInitEm,
    BruteForce,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::AiEm => "ai_em",
            Method::LsInitEm => "ls_init_em",
            Method::BruteForce => "brute_force",
        }
    }
}

fn default_methods() -> Vec<Method> {
    vec![Method::AiEm, Method::LsInitEm]
}

fn default_shuffle() -> f64 {
    1.0
}

fn default_trials() -> usize {
    10
}

fn default_max_iters() -> usize {
    EmConfig::default().max_iters
}

fn default_eps() -> f64 {
    EmConfig::default().eps
}

fn default_parallel() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub m: usize,
    #[serde(default)]
    pub snr_db: Option<f64>,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default = "default_shuffle")]
    pub shuffle_fraction: f64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Run trials on the rayon pool. Results are identical either way.
    #[serde(default = "default_parallel")]
    pub parallel: bool,
    #[serde(skip)]
    pub solver: TrackConfig,
}

impl ExperimentConfig {
    pub fn new(n: usize, m: usize, noise: NoiseLevel, trials: usize, seed: u64) -> Self {
        let (snr_db, sigma) = match noise {
            NoiseLevel::Sigma(s) => (None, Some(s)),
            NoiseLevel::SnrDb(d) => (Some(d), None),
        };
        ExperimentConfig {
            n,
            m,
            snr_db,
            sigma,
            shuffle_fraction: 1.0,
            trials,
            seed,
            methods: default_methods(),
            max_iters: default_max_iters(),
            eps: default_eps(),
            parallel: true,
            solver: TrackConfig::default(),
        }
    }

    pub fn noise(&self) -> Result<NoiseLevel> {
        match (self.snr_db, self.sigma) {
            (Some(d), None) => Ok(NoiseLevel::SnrDb(d)),
            (None, Some(s)) => Ok(NoiseLevel::Sigma(s)),
            _ => Err(Error::invalid("exactly one of snr_db and sigma must be given")),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.noise()?;
        if self.trials == 0 {
            return Err(Error::invalid("trials must be at least 1"));
        }
        if self.n == 0 || self.m <= self.n {
            return Err(Error::invalid(format!(
                "need m > n >= 1, got m = {}, n = {}",
                self.m, self.n
            )));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("no methods requested"));
        }
        if self.methods.contains(&Method::AiEm) && self.n > MAX_N {
            return Err(Error::DimensionCap {
                n: self.n,
                max: MAX_N,
            });
        }
        if self.methods.contains(&Method::BruteForce) && self.m > MAX_BRUTE_FORCE_M {
            return Err(Error::TooLarge {
                m: self.m,
                max: MAX_BRUTE_FORCE_M,
            });
        }
        if !(0.0..=1.0).contains(&self.shuffle_fraction) {
            return Err(Error::invalid("shuffle fraction must lie in [0, 1]"));
        }
        if self.max_iters == 0 || !(self.eps >= 0.0) {
            return Err(Error::invalid("EM needs max_iters >= 1 and eps >= 0"));
        }
        self.solver.validate()
    }

    fn em(&self) -> EmConfig {
        EmConfig {
            max_iters: self.max_iters,
            eps: self.eps,
        }
    }
}

/// One method on one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub seed: u64,
    pub method: Method,
    pub n: usize,
    pub m: usize,
    pub snr_db: Option<f64>,
    pub sigma: f64,
    pub shuffle_fraction: f64,
    pub rel_error_pct: f64,
    /// Oracle root error (algebraic initialization only).
    pub best_root_error_pct: Option<f64>,
    pub init_error_pct: Option<f64>,
    pub solver_ms: f64,
    pub em_ms: f64,
    pub root_count: usize,
    pub objective: f64,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub error: Option<String>,
}

impl TrialRecord {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

fn run_method(
    method: Method,
    inst: &RegressionInstance,
    cfg: &ExperimentConfig,
) -> Result<TrialRecord> {
    let truth = inst.ground_truth().expect("generated instances carry ground truth");
    let xi_star = &truth.xi_star;
    let mut rec = TrialRecord {
        seed: truth.seed,
        method,
        n: inst.n(),
        m: inst.m(),
        snr_db: truth.snr_db,
        sigma: truth.sigma,
        shuffle_fraction: truth.shuffle_fraction,
        rel_error_pct: f64::NAN,
        best_root_error_pct: None,
        init_error_pct: None,
        solver_ms: 0.0,
        em_ms: 0.0,
        root_count: 0,
        objective: f64::NAN,
        objective_trace: Vec::new(),
        iterations: 0,
        error: None,
    };
    match method {
        Method::AiEm | Method::LsInitEm => {
            let res = if method == Method::AiEm {
                let ai = AiEmConfig {
                    em: cfg.em(),
                    solver: cfg.solver.clone(),
                };
                ai_em(inst.a(), inst.y(), &ai)?
            } else {
                ls_init_em(inst.a(), inst.y(), &cfg.em())?
            };
            rec.rel_error_pct = relative_error(xi_star, &res.xi)?;
            rec.init_error_pct = Some(relative_error(xi_star, &res.init_point)?);
            if !res.roots.is_empty() {
                rec.best_root_error_pct = Some(best_root_error(&res.roots, xi_star)?.1);
            }
            rec.root_count = res.roots.len();
            rec.solver_ms = res.solver_time.as_secs_f64() * 1e3;
            rec.em_ms = res.em_time.as_secs_f64() * 1e3;
            rec.objective = res.objective;
            rec.objective_trace = res.objective_trace;
            rec.iterations = res.iterations;
        }
        Method::BruteForce => {
            let started = Instant::now();
            let mle = brute_force_mle(inst.a(), inst.y())?;
            rec.em_ms = started.elapsed().as_secs_f64() * 1e3;
            rec.rel_error_pct = relative_error(xi_star, &mle.xi)?;
            rec.objective = mle.objective;
        }
    }
    Ok(rec)
}

fn run_trial(cfg: &ExperimentConfig, noise: NoiseLevel, seed: u64) -> Vec<TrialRecord> {
    let inst = match generate_instance(cfg.n, cfg.m, noise, cfg.shuffle_fraction, seed) {
        Ok(inst) => inst,
        Err(e) => {
            return cfg
                .methods
                .iter()
                .map(|&method| failed_record(cfg, method, seed, &e))
                .collect()
        }
    };
    cfg.methods
        .iter()
        .map(|&method| {
            run_method(method, &inst, cfg).unwrap_or_else(|e| {
                let mut rec = failed_record(cfg, method, seed, &e);
                let truth = inst.ground_truth().expect("ground truth");
                rec.sigma = truth.sigma;
                rec
            })
        })
        .collect()
}

fn failed_record(cfg: &ExperimentConfig, method: Method, seed: u64, e: &Error) -> TrialRecord {
    TrialRecord {
        seed,
        method,
        n: cfg.n,
        m: cfg.m,
        snr_db: cfg.snr_db,
        sigma: cfg.sigma.unwrap_or(f64::NAN),
        shuffle_fraction: cfg.shuffle_fraction,
        rel_error_pct: f64::NAN,
        best_root_error_pct: None,
        init_error_pct: None,
        solver_ms: 0.0,
        em_ms: 0.0,
        root_count: 0,
        objective: f64::NAN,
        objective_trace: Vec::new(),
        iterations: 0,
        error: Some(e.to_string()),
    }
}

/// Runs `cfg.trials` trials with seeds `seed, seed + 1, ...`. Records come
/// back ordered by (seed, method order in the config); per-trial failures are
/// recorded, not raised.
pub fn run_benchmark(cfg: &ExperimentConfig) -> Result<Vec<TrialRecord>> {
    cfg.validate()?;
    let noise = cfg.noise()?;
    let seeds: Vec<u64> = (0..cfg.trials as u64).map(|t| cfg.seed + t).collect();
    let per_trial: Vec<Vec<TrialRecord>> = if cfg.parallel {
        seeds.par_iter().map(|&s| run_trial(cfg, noise, s)).collect()
    } else {
        seeds.iter().map(|&s| run_trial(cfg, noise, s)).collect()
    };
    Ok(per_trial.into_iter().flatten().collect())
}

/// Six significant digits, printed in shortest form.
/// Six significant digits; NaN marks a missing value and renders empty.
pub fn format_sig6(v: f64) -> String {
    if v.is_nan() {
        return String::new();
    }
    if v.is_infinite() {
        return format!("{v}");
    }
    let rounded: f64 = format!("{v:.5e}").parse().expect("valid float");
    format!("{rounded}")
}

pub const CSV_HEADER: &str = "seed,method,n,m,snr_db,sigma,shuffle_fraction,rel_error_pct,\
best_root_error_pct,init_error_pct,solver_ms,em_ms,root_count";

pub fn write_csv<W: Write>(records: &[TrialRecord], mut out: W) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    let opt = |v: Option<f64>| v.map(format_sig6).unwrap_or_default();
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.seed,
            r.method.as_str(),
            r.n,
            r.m,
            opt(r.snr_db),
            format_sig6(r.sigma),
            format_sig6(r.shuffle_fraction),
            format_sig6(r.rel_error_pct),
            opt(r.best_root_error_pct),
            opt(r.init_error_pct),
            format_sig6(r.solver_ms),
            format_sig6(r.em_ms),
            r.root_count
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    pub trials: usize,
    pub failures: usize,
    pub mean_rel_error_pct: f64,
    pub median_rel_error_pct: f64,
    pub mean_init_error_pct: f64,
    pub mean_best_root_error_pct: f64,
    pub mean_solver_ms: f64,
    pub mean_em_ms: f64,
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// Mean and median per method over the successful trials, in first-seen
/// method order.
pub fn summarize(records: &[TrialRecord]) -> Vec<MethodSummary> {
    let mut methods: Vec<Method> = Vec::new();
    for r in records {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    methods
        .into_iter()
        .map(|method| {
            let all: Vec<&TrialRecord> = records.iter().filter(|r| r.method == method).collect();
            let ok: Vec<&TrialRecord> = all.iter().copied().filter(|r| !r.failed()).collect();
            let col = |f: &dyn Fn(&TrialRecord) -> Option<f64>| -> Vec<f64> {
                ok.iter().filter_map(|r| f(r)).collect()
            };
            let rel = col(&|r| Some(r.rel_error_pct));
            MethodSummary {
                method,
                trials: all.len(),
                failures: all.len() - ok.len(),
                mean_rel_error_pct: mean(&rel),
                median_rel_error_pct: median(&rel),
                mean_init_error_pct: mean(&col(&|r| r.init_error_pct)),
                mean_best_root_error_pct: mean(&col(&|r| r.best_root_error_pct)),
                mean_solver_ms: mean(&col(&|r| Some(r.solver_ms))),
                mean_em_ms: mean(&col(&|r| Some(r.em_ms))),
            }
        })
        .collect()
}

pub fn write_summary<W: Write>(summary: &[MethodSummary], mut out: W) -> io::Result<()> {
    writeln!(
        out,
        "method,trials,failures,mean_rel_error_pct,median_rel_error_pct,\
         mean_init_error_pct,mean_best_root_error_pct,mean_solver_ms,mean_em_ms"
    )?;
    for s in summary {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            s.method.as_str(),
            s.trials,
            s.failures,
            format_sig6(s.mean_rel_error_pct),
            format_sig6(s.median_rel_error_pct),
            format_sig6(s.mean_init_error_pct),
            format_sig6(s.mean_best_root_error_pct),
            format_sig6(s.mean_solver_ms),
            format_sig6(s.mean_em_ms),
        )?;
    }
    Ok(())
}
