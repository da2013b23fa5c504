//! End-to-end acceptance suite. Runs every criterion sequentially (timings
//! are part of several of them), reports one line per criterion on the real
//! stdout so the verdicts are visible without `--nocapture`, then fails if
//! any criterion failed.

use std::io::Write as _;
use std::time::Instant;

use itertools::Itertools;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unshuffle_core::estimator::{
    ai_em, best_permutation, brute_force_mle, count_consistent_permutations, AiEmConfig,
};
use unshuffle_core::experiments::{
    generate_instance, mean, relative_error, run_benchmark, summarize, ExperimentConfig, Method,
    MethodSummary, NoiseLevel, TrialRecord,
};
use unshuffle_core::polysolve::{
    closed_form_small, dedupe_roots, solve_power_sum, Root, RootStatus, SolveReport, TrackConfig,
};
use unshuffle_core::powersum::{build_system, PowerSumSystem, RegressionInstance};

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Verdict {
            pass,
            detail: detail.into(),
        }
    }
}

/// Objective traces gathered from criteria 3 to 7 for the monotonicity check.
#[derive(Default)]
struct Traces {
    runs: usize,
    violations: Vec<String>,
}

impl Traces {
    fn check(&mut self, trace: &[f64], label: impl FnOnce() -> String) {
        self.runs += 1;
        if trace.windows(2).any(|w| w[1] > w[0]) {
            self.violations.push(label());
        }
    }

    fn records(&mut self, records: &[TrialRecord], tag: &str) {
        for r in records {
            self.check(&r.objective_trace, || {
                format!("{tag} seed {} {}", r.seed, r.method.as_str())
            });
        }
    }
}

fn factorial(n: usize) -> usize {
    (1..=n).product()
}

fn sequential() -> TrackConfig {
    TrackConfig {
        parallel: false,
        ..TrackConfig::default()
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn best_root_distance(roots: &[Root], xi: &[f64]) -> f64 {
    roots
        .iter()
        .map(|r| relative_error(xi, &r.real_part()).unwrap() / 100.0)
        .fold(f64::INFINITY, f64::min)
}

fn summary_for(summary: &[MethodSummary], method: Method) -> &MethodSummary {
    summary.iter().find(|s| s.method == method).unwrap()
}

fn bench(
    n: usize,
    m: usize,
    snr_db: f64,
    trials: usize,
    shuffle_fraction: f64,
    methods: Vec<Method>,
) -> Vec<TrialRecord> {
    let mut cfg = ExperimentConfig::new(n, m, NoiseLevel::SnrDb(snr_db), trials, 0);
    cfg.shuffle_fraction = shuffle_fraction;
    cfg.methods = methods;
    cfg.parallel = false;
    let records = run_benchmark(&cfg).unwrap();
    for r in &records {
        assert!(!r.failed(), "trial failed: {:?}", r.error);
    }
    records
}

fn criterion_1() -> Verdict {
    let a = DMatrix::from_row_slice(3, 2, &[-1.0, -2.0, 2.0, -3.0, 0.0, 4.0]);
    let y = vec![8.0, -5.0, -4.0];
    let start = Instant::now();
    let sys = build_system(&RegressionInstance::new(a.clone(), y.clone()).unwrap()).unwrap();
    let report = solve_power_sum(&sys, &sequential()).unwrap();
    let est = ai_em(
        &a,
        &y,
        &AiEmConfig {
            solver: sequential(),
            ..AiEmConfig::default()
        },
    )
    .unwrap();
    let elapsed = start.elapsed().as_secs_f64() * 1e3;

    let expected = [[1.0, 2.0], [-38.0 / 13.0, -25.0 / 13.0]];
    let roots_ok = report.roots.len() == 2
        && expected.iter().all(|e| {
            report.roots.iter().any(|r| {
                r.point
                    .iter()
                    .zip(e)
                    .all(|(p, q)| close(p.re, *q, 1e-9) && p.im.abs() <= 1e-9)
            })
        });
    let est_ok = close(est.xi[0], 1.0, 1e-9)
        && close(est.xi[1], 2.0, 1e-9)
        && est.objective <= 1e-10
        && est.perm == vec![1, 2, 0];
    Verdict::new(
        roots_ok && est_ok && elapsed < 10.0,
        format!(
            "{} roots, xi = ({:.12}, {:.12}), objective {:.1e}, perm {:?}, {elapsed:.2} ms",
            report.roots.len(),
            est.xi[0],
            est.xi[1],
            est.objective,
            est.perm
        ),
    )
}

fn root_count_violation(sys: &PowerSumSystem, report: &SolveReport) -> Option<String> {
    let n = sys.n();
    let l = report.roots.len();
    let converged = report
        .roots
        .iter()
        .filter(|r| matches!(r.status, RootStatus::Converged | RootStatus::Refined))
        .count();
    (l < 1 || l > factorial(n) || converged < 1 || report.paths_total != factorial(n))
        .then(|| format!("L = {l}, converged {converged}, paths {}", report.paths_total))
}

fn criterion_2() -> Verdict {
    let start = Instant::now();
    let mut violations = Vec::new();
    let mut solves = 0;
    for n in 2..=4 {
        for seed in 0..200u64 {
            let sigma = [0.0, 0.01, 0.1][(seed % 3) as usize];
            let m = [20, 500][((seed / 3) % 2) as usize];
            let inst = generate_instance(n, m, NoiseLevel::Sigma(sigma), 1.0, seed).unwrap();
            let sys = build_system(&inst).unwrap();
            let report = solve_power_sum(&sys, &TrackConfig::default()).unwrap();
            solves += 1;
            if let Some(v) = root_count_violation(&sys, &report) {
                violations.push(format!("n={n} seed={seed}: {v}"));
            }
        }
        for m in [20, 500] {
            let base = generate_instance(n, m, NoiseLevel::Sigma(0.0), 1.0, 1000 + m as u64)
                .unwrap();
            let adversarial: [(&str, Vec<f64>); 3] = [
                ("all-equal", vec![1.0; m]),
                (
                    "alternating",
                    (0..m).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect(),
                ),
                ("magnitude 1e6", base.y().iter().map(|v| v * 1e6).collect()),
            ];
            for (label, y) in adversarial {
                let inst = RegressionInstance::new(base.a().clone(), y).unwrap();
                let sys = build_system(&inst).unwrap();
                let report = solve_power_sum(&sys, &TrackConfig::default()).unwrap();
                solves += 1;
                if let Some(v) = root_count_violation(&sys, &report) {
                    violations.push(format!("n={n} m={m} {label}: {v}"));
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Verdict::new(
        violations.is_empty() && secs < 120.0,
        format!(
            "{solves} solves, {} violations {:?}, {secs:.1} s",
            violations.len(),
            violations.iter().take(3).collect::<Vec<_>>()
        ),
    )
}

fn criterion_3(traces: &mut Traces) -> Verdict {
    let mut worst_root = 0.0f64;
    let mut worst_est = 0.0f64;
    let mut trials = 0;
    for n in 2..=4 {
        for m in [20, 500] {
            for seed in 0..50u64 {
                let inst = generate_instance(n, m, NoiseLevel::Sigma(0.0), 1.0, seed).unwrap();
                let xi = &inst.ground_truth().unwrap().xi_star;
                let est = ai_em(inst.a(), inst.y(), &AiEmConfig::default()).unwrap();
                worst_root = worst_root.max(best_root_distance(&est.roots, xi));
                worst_est = worst_est.max(relative_error(xi, &est.xi).unwrap() / 100.0);
                traces.check(&est.objective_trace, || format!("noiseless n={n} m={m} seed={seed}"));
                trials += 1;
            }
        }
    }
    Verdict::new(
        worst_root <= 1e-6 && worst_est <= 1e-8,
        format!("{trials} trials, worst root distance {worst_root:.2e}, worst AI-EM error {worst_est:.2e}"),
    )
}

fn criterion_4(traces: &mut Traces) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for n in [3, 4] {
        let records = bench(n, 500, 40.0, 10, 1.0, vec![Method::AiEm]);
        traces.records(&records, "m=500");
        let s = summarize(&records);
        let ai = summary_for(&s, Method::AiEm);
        let max_solver = records.iter().map(|r| r.solver_ms).fold(0.0, f64::max);
        let ok = ai.mean_rel_error_pct <= 1.0
            && ai.mean_best_root_error_pct <= 10.0
            && max_solver <= 100.0;
        pass &= ok;
        parts.push(format!(
            "n={n}: AI-EM {:.3}% (median {:.3}%), root {:.2}%, solver max {max_solver:.1} ms",
            ai.mean_rel_error_pct, ai.median_rel_error_pct, ai.mean_best_root_error_pct
        ));
    }
    Verdict::new(pass, parts.join("; "))
}

fn criterion_5(traces: &mut Traces) -> Verdict {
    let small = bench(4, 1000, 40.0, 10, 1.0, vec![Method::AiEm]);
    let large = bench(4, 10000, 40.0, 10, 1.0, vec![Method::AiEm]);
    traces.records(&small, "m=1000");
    traces.records(&large, "m=10000");
    let err = |r: &[TrialRecord]| mean(&r.iter().map(|t| t.rel_error_pct).collect::<Vec<_>>());
    let solver = |r: &[TrialRecord]| mean(&r.iter().map(|t| t.solver_ms).collect::<Vec<_>>());
    let em = |r: &[TrialRecord]| mean(&r.iter().map(|t| t.em_ms).collect::<Vec<_>>());
    let solver_growth = solver(&large) / solver(&small);
    let em_growth = em(&large) / em(&small);
    let max_total = large
        .iter()
        .map(|t| t.solver_ms + t.em_ms)
        .fold(0.0, f64::max);
    let pass = err(&small) <= 2.0
        && err(&large) <= 8.0
        && solver_growth < 10.0
        && solver_growth < em_growth
        && max_total <= 5000.0;
    Verdict::new(
        pass,
        format!(
            "m=1000 {:.3}%, m=10000 {:.3}%; solver {:.1} -> {:.1} ms (x{solver_growth:.2}), \
             EM {:.1} -> {:.1} ms (x{em_growth:.2}); max total {max_total:.0} ms",
            err(&small),
            err(&large),
            solver(&small),
            solver(&large),
            em(&small),
            em(&large)
        ),
    )
}

fn criterion_6(traces: &mut Traces) -> Verdict {
    let mut pass = true;
    let mut previous = f64::INFINITY;
    let mut parts = Vec::new();
    for snr in [20.0, 40.0, 60.0, 80.0] {
        let records = bench(3, 500, snr, 20, 1.0, vec![Method::AiEm, Method::LsInitEm]);
        traces.records(&records, &format!("snr {snr}"));
        let s = summarize(&records);
        let ai = summary_for(&s, Method::AiEm).mean_rel_error_pct;
        let ls = summary_for(&s, Method::LsInitEm).mean_rel_error_pct;
        pass &= ai < ls && ai <= previous;
        previous = ai;
        parts.push(format!("{snr} dB: AI-EM {ai:.4}% vs LS {ls:.1}%"));
    }
    Verdict::new(pass, parts.join("; "))
}

fn criterion_7(traces: &mut Traces) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for fraction in [0.05, 0.5, 1.0] {
        let records = bench(4, 500, 40.0, 20, fraction, vec![Method::AiEm, Method::LsInitEm]);
        traces.records(&records, &format!("fraction {fraction}"));
        let s = summarize(&records);
        let ai = summary_for(&s, Method::AiEm).mean_rel_error_pct;
        let ls = summary_for(&s, Method::LsInitEm).mean_rel_error_pct;
        if fraction == 0.05 {
            pass &= ai <= 1.0 && ls <= 1.0;
        }
        if fraction == 1.0 {
            pass &= ai <= 1.0 && ls >= 10.0;
        }
        parts.push(format!("{fraction}: AI-EM {ai:.3}% vs LS {ls:.2}%"));
    }
    Verdict::new(pass, parts.join("; "))
}

fn criterion_8() -> Verdict {
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(8);

    for trial in 0..500 {
        let m = 1 + trial % 6;
        let ties = trial % 4 == 0;
        let mut draw = || -> Vec<f64> {
            (0..m)
                .map(|_| {
                    if ties {
                        rng.random_range(-2i32..3) as f64
                    } else {
                        rng.random_range(-10.0..10.0)
                    }
                })
                .collect()
        };
        let (y, v) = (draw(), draw());
        let (_, residual) = best_permutation(&y, &v).unwrap();
        let exhaustive = (0..m)
            .permutations(m)
            .map(|p| {
                p.iter()
                    .enumerate()
                    .map(|(i, &j)| (y[j] - v[i]).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(f64::INFINITY, f64::min);
        if residual > exhaustive + 1e-12 * (1.0 + exhaustive) {
            failures.push(format!("(a) trial {trial}"));
        }
    }

    for seed in 0..50u64 {
        let n = 1 + (seed % 2) as usize;
        let m = [4, 5, 6, 7][(seed % 4) as usize];
        let inst = generate_instance(n, m, NoiseLevel::Sigma(0.0), 1.0, seed).unwrap();
        let truth = inst.ground_truth().unwrap();
        let mle = brute_force_mle(inst.a(), inst.y()).unwrap();
        let xi_ok = mle
            .xi
            .iter()
            .zip(&truth.xi_star)
            .all(|(a, b)| close(*a, *b, 1e-9 * (1.0 + b.abs())));
        let unique = count_consistent_permutations(inst.a(), inst.y(), 1e-8).unwrap() == 1;
        if mle.perm != truth.pi_star || !xi_ok || !unique {
            failures.push(format!("(b) seed {seed}"));
        }
    }

    for seed in 0..100u64 {
        let n = 1 + (seed % 2) as usize;
        let sigma = [0.0, 0.05, 0.5][(seed % 3) as usize];
        let inst =
            generate_instance(n, 5 + seed as usize, NoiseLevel::Sigma(sigma), 1.0, seed).unwrap();
        let sys = build_system(&inst).unwrap();
        let closed = closed_form_small(&sys).unwrap();
        let tracked = solve_power_sum(&sys, &sequential()).unwrap().roots;
        let matched = closed.len() == tracked.len()
            && closed.iter().all(|c| {
                tracked.iter().any(|t| {
                    c.point
                        .iter()
                        .zip(&t.point)
                        .all(|(u, v)| (u - v).norm() <= 1e-8 * (1.0 + u.norm()))
                })
            });
        if !matched {
            failures.push(format!("(c) seed {seed}"));
        }
    }

    let h = 1e-6;
    for probe in 0..100u64 {
        let n = 1 + (probe % 6) as usize;
        let inst = generate_instance(n, 20, NoiseLevel::Sigma(0.05), 1.0, probe).unwrap();
        let sys = build_system(&inst).unwrap();
        let x: Vec<Complex64> = (0..n)
            .map(|_| Complex64::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)))
            .collect();
        let jac = sys.jacobian(&x).unwrap();
        let mut worst = 0.0f64;
        for j in 0..n {
            let mut plus = x.clone();
            let mut minus = x.clone();
            plus[j] += h;
            minus[j] -= h;
            let fp = sys.evaluate(&plus).unwrap();
            let fm = sys.evaluate(&minus).unwrap();
            for k in 0..n {
                let fd = (fp[k] - fm[k]) / (2.0 * h);
                worst = worst.max((fd - jac[(k, j)]).norm() / jac[(k, j)].norm().max(1.0));
            }
        }
        if worst > 1e-5 {
            failures.push(format!("(d) probe {probe}: {worst:.1e}"));
        }
    }

    Verdict::new(
        failures.is_empty(),
        format!(
            "500 sorting, 50 brute-force, 100 closed-form, 100 Jacobian checks; failures {failures:?}"
        ),
    )
}

fn criterion_9(traces: &Traces) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut problems = traces.violations.clone();

    for case in 0..200 {
        let count = rng.random_range(0..30);
        let points: Vec<Vec<Complex64>> = (0..count)
            .map(|_| {
                (0..3)
                    .map(|_| {
                        let re = rng.random_range(-3i32..3) as f64 * 0.5;
                        let jitter = rng.random_range(0..3) as f64 * 1e-9;
                        Complex64::new(re + jitter, rng.random_range(-3i32..3) as f64 * 0.5)
                    })
                    .collect()
            })
            .collect();
        let tol = 10f64.powf(rng.random_range(-8.0..-2.0));
        let once = dedupe_roots(&points, tol).unwrap();
        if dedupe_roots(&once, tol).unwrap() != once {
            problems.push(format!("dedupe case {case}"));
        }
    }

    for case in 0..200u64 {
        let m = rng.random_range(5..200);
        let y: Vec<f64> = (0..m).map(|_| rng.random_range(-1e3..1e3)).collect();
        let mut shuffled = y.clone();
        shuffled.shuffle(&mut rng);
        let a = generate_instance(3, m, NoiseLevel::Sigma(0.0), 1.0, case)
            .unwrap()
            .a()
            .clone();
        let c1 = build_system(&RegressionInstance::new(a.clone(), y).unwrap()).unwrap();
        let c2 = build_system(&RegressionInstance::new(a, shuffled).unwrap()).unwrap();
        let bits = |s: &PowerSumSystem| s.constants().iter().map(|c| c.to_bits()).collect_vec();
        if bits(&c1) != bits(&c2) {
            problems.push(format!("permutation invariance case {case}"));
        }
    }

    let strip = |records: Vec<TrialRecord>| {
        records
            .into_iter()
            .map(|mut r| {
                r.solver_ms = 0.0;
                r.em_ms = 0.0;
                r
            })
            .collect_vec()
    };
    let methods = vec![Method::AiEm, Method::LsInitEm];
    let first = strip(bench(4, 300, 30.0, 5, 1.0, methods.clone()));
    let second = strip(bench(4, 300, 30.0, 5, 1.0, methods));
    if first != second {
        problems.push("benchmark records differ between runs".into());
    }
    let inst = generate_instance(4, 200, NoiseLevel::SnrDb(30.0), 1.0, 3).unwrap();
    let sys = build_system(&inst).unwrap();
    let bits = |r: SolveReport| {
        r.roots
            .iter()
            .flat_map(|root| root.point.iter().flat_map(|v| [v.re.to_bits(), v.im.to_bits()]))
            .collect_vec()
    };
    let s1 = bits(solve_power_sum(&sys, &TrackConfig::default()).unwrap());
    let s2 = bits(solve_power_sum(&sys, &TrackConfig::default()).unwrap());
    if s1 != s2 {
        problems.push("solve differs between runs".into());
    }

    Verdict::new(
        problems.is_empty() && traces.runs > 0,
        format!(
            "{} EM traces checked; dedupe, invariance, determinism; problems {:?}",
            traces.runs,
            problems.iter().take(5).collect_vec()
        ),
    )
}

#[test]
fn acceptance() {
    let mut traces = Traces::default();
    let mut verdicts = Vec::new();
    let _ = std::io::stdout().write_all(b"\n");
    let mut report = |id: usize, v: Verdict| {
        let line = format!(
            "criterion {id}: {} {}\n",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        let mut out = std::io::stdout().lock();
        let _ = out.write_all(line.as_bytes());
        let _ = out.flush();
        verdicts.push((id, v.pass));
    };
    report(1, criterion_1());
    report(2, criterion_2());
    report(3, criterion_3(&mut traces));
    report(4, criterion_4(&mut traces));
    report(5, criterion_5(&mut traces));
    report(6, criterion_6(&mut traces));
    report(7, criterion_7(&mut traces));
    report(8, criterion_8());
    report(9, criterion_9(&traces));
    let failed: Vec<usize> = verdicts.iter().filter(|(_, p)| !p).map(|(i, _)| *i).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
