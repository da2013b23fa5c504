//! `unshuffle`: shuffled linear regression from the command line.
//!
//! Exit codes: 0 on success, 1 for usage, I/O or validation errors, 2 when
//! the data admit no solution (inconsistent or degenerate system, no roots).
//! Primary output goes to stdout and is byte-identical across runs with the
//! same inputs; wall-clock timings go to stderr.

mod io;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use unshuffle_core::estimator::{ai_em, AiEmConfig, EmConfig, EstimationResult};
use unshuffle_core::experiments::{
    self, generate_instance, run_benchmark, summarize, ExperimentConfig, NoiseLevel,
};
use unshuffle_core::polysolve::{solve_power_sum, write_trace_csv, SolveReport, TrackConfig};
use unshuffle_core::powersum::{build_system, RegressionInstance};

const THREADS_ENV: &str = "UNSHUFFLE_THREADS";

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn io(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<unshuffle_core::Error> for Failure {
    fn from(e: unshuffle_core::Error) -> Self {
        Failure {
            code: if e.is_mathematical() { 2 } else { 1 },
            message: e.to_string(),
        }
    }
}

#[derive(Parser)]
#[command(name = "unshuffle", version, about = "Linear regression with unknown row correspondences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the coefficients and the permutation (algebraic init + EM).
    Estimate(EstimateArgs),
    /// Print all complex roots of the power-sum system.
    Solve(SolveArgs),
    /// Write a synthetic instance with its ground truth.
    Gen(GenArgs),
    /// Run a seeded Monte-Carlo benchmark described by a TOML file.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct Inputs {
    /// Design matrix, one row per line, comma separated.
    matrix: PathBuf,
    /// Observations, one value per line or a single row.
    y: PathBuf,
}

#[derive(Args)]
struct TrackArgs {
    /// Seed for the homotopy's random gamma constant.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    initial_step: Option<f64>,
    #[arg(long)]
    min_step: Option<f64>,
    #[arg(long)]
    max_step: Option<f64>,
    #[arg(long)]
    newton_tol: Option<f64>,
    #[arg(long)]
    newton_max_iters: Option<usize>,
    #[arg(long)]
    corrector_max_failures: Option<usize>,
    #[arg(long)]
    infinity_threshold: Option<f64>,
    #[arg(long)]
    dedupe_tol: Option<f64>,
}

impl TrackArgs {
    fn config(&self) -> Result<TrackConfig, Failure> {
        let mut cfg = TrackConfig {
            seed: self.seed,
            ..TrackConfig::default()
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    cfg.$field = v;
                }
            )*};
        }
        set!(
            initial_step,
            min_step,
            max_step,
            newton_tol,
            newton_max_iters,
            corrector_max_failures,
            infinity_threshold,
            dedupe_tol
        );
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct EmArgs {
    /// Maximum number of EM sweeps.
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    /// Relative decrease of the objective below which EM stops.
    #[arg(long, default_value_t = 0.01)]
    eps: f64,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[command(flatten)]
    em: EmArgs,
    #[command(flatten)]
    track: TrackArgs,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[command(flatten)]
    track: TrackArgs,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Write per-path traces to `<dir>/trace.csv`.
    #[arg(long)]
    trace_dir: Option<PathBuf>,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct NoiseArgs {
    /// Noise standard deviation.
    #[arg(long)]
    sigma: Option<f64>,
    /// Signal-to-noise ratio in dB, using the realized signal power.
    #[arg(long)]
    snr_db: Option<f64>,
}

impl NoiseArgs {
    fn level(&self) -> NoiseLevel {
        match (self.sigma, self.snr_db) {
            (Some(s), _) => NoiseLevel::Sigma(s),
            (None, Some(d)) => NoiseLevel::SnrDb(d),
            (None, None) => unreachable!("clap requires one of the noise flags"),
        }
    }
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    m: usize,
    #[command(flatten)]
    noise: NoiseArgs,
    /// Fraction of rows that are permuted.
    #[arg(long, default_value_t = 1.0)]
    shuffle_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output prefix; writes `<out>.A.csv`, `<out>.y.csv`, `<out>.truth.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// TOML file with the experiment description.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    eps: Option<f64>,
    /// Leave the timing columns empty so that output is reproducible.
    #[arg(long)]
    no_timings: bool,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .map_err(|_| Failure::io(format!("{THREADS_ENV} must be a non-negative integer, got {raw:?}")))?;
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Failure::io(format!("cannot configure thread pool: {e}")))?;
    }
    Ok(())
}

fn load_instance(inputs: &Inputs) -> Result<RegressionInstance, Failure> {
    let a = io::read_matrix(&inputs.matrix)?;
    let y = io::read_vector(&inputs.y)?;
    Ok(RegressionInstance::new(a, y)?)
}

fn ms(d: std::time::Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn join(values: impl IntoIterator<Item = impl ToString>) -> String {
    values
        .into_iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn join_num<'a>(values: impl IntoIterator<Item = &'a f64>) -> String {
    values
        .into_iter()
        .map(|&v| io::num(v))
        .collect::<Vec<_>>()
        .join(",")
}

fn estimate_text(res: &EstimationResult, format: Format) -> String {
    match format {
        Format::Json => {
            let value = json!({
                "xi": res.xi,
                "perm": res.perm,
                "objective": res.objective,
                "objective_trace": res.objective_trace,
                "iterations": res.iterations,
                "init_point": res.init_point,
                "init_source": res.init_source,
                "root_count": res.roots.len(),
            });
            format!("{}\n", serde_json::to_string_pretty(&value).expect("serializable"))
        }
        Format::Csv => {
            let mut s = String::new();
            let _ = writeln!(s, "xi,{}", join_num(&res.xi));
            let _ = writeln!(s, "perm,{}", join(&res.perm));
            let _ = writeln!(s, "objective,{}", io::num(res.objective));
            let _ = writeln!(s, "iterations,{}", res.iterations);
            let source = serde_json::to_value(res.init_source).expect("serializable");
            let _ = writeln!(s, "init_source,{}", source.as_str().unwrap_or_default());
            let _ = writeln!(s, "init_point,{}", join_num(&res.init_point));
            let _ = writeln!(s, "root_count,{}", res.roots.len());
            let _ = writeln!(s, "objective_trace,{}", join_num(&res.objective_trace));
            s
        }
    }
}

fn cmd_estimate(args: &EstimateArgs) -> Result<(), Failure> {
    let inst = load_instance(&args.inputs)?;
    let cfg = AiEmConfig {
        em: EmConfig {
            max_iters: args.em.max_iters,
            eps: args.em.eps,
        },
        solver: args.track.config()?,
    };
    let res = ai_em(inst.a(), inst.y(), &cfg)?;
    print!("{}", estimate_text(&res, args.format));
    eprintln!(
        "solver_ms={} em_ms={}",
        ms(res.solver_time),
        ms(res.em_time)
    );
    Ok(())
}

fn solve_text(report: &SolveReport, n: usize, format: Format) -> String {
    match format {
        Format::Json => {
            let roots: Vec<_> = report
                .roots
                .iter()
                .map(|r| {
                    json!({
                        "re": r.point.iter().map(|v| v.re).collect::<Vec<_>>(),
                        "im": r.point.iter().map(|v| v.im).collect::<Vec<_>>(),
                        "residual": r.residual,
                        "status": r.status.as_str(),
                        "path": r.path_index,
                    })
                })
                .collect();
            let value = json!({
                "roots": roots,
                "paths_total": report.paths_total,
                "paths_converged": report.paths_converged,
                "paths_diverged": report.paths_diverged,
                "paths_failed": report.paths_failed,
                "gamma": [report.gamma.re, report.gamma.im],
                "seed": report.seed,
            });
            format!("{}\n", serde_json::to_string_pretty(&value).expect("serializable"))
        }
        Format::Csv => {
            let mut s = String::new();
            let coords = (1..=n).map(|k| format!("re_{k},im_{k}"));
            let _ = writeln!(s, "root,status,residual,path,{}", join(coords));
            for (i, r) in report.roots.iter().enumerate() {
                let parts = r.point.iter().map(|v| format!("{},{}", io::num(v.re), io::num(v.im)));
                let _ = writeln!(
                    s,
                    "{i},{},{},{},{}",
                    r.status.as_str(),
                    io::num(r.residual),
                    r.path_index,
                    join(parts)
                );
            }
            let _ = writeln!(s);
            let _ = writeln!(
                s,
                "paths_total,paths_converged,paths_diverged,paths_failed,gamma_re,gamma_im,seed"
            );
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                report.paths_total,
                report.paths_converged,
                report.paths_diverged,
                report.paths_failed,
                io::num(report.gamma.re),
                io::num(report.gamma.im),
                report.seed
            );
            s
        }
    }
}

fn cmd_solve(args: &SolveArgs) -> Result<(), Failure> {
    let inst = load_instance(&args.inputs)?;
    if let Some(dir) = &args.trace_dir {
        if !dir.is_dir() {
            return Err(Failure::io(format!("{}: not a directory", dir.display())));
        }
    }
    let mut cfg = args.track.config()?;
    cfg.record_trace = args.trace_dir.is_some();
    let system = build_system(&inst)?;
    let report = solve_power_sum(&system, &cfg)?;
    print!("{}", solve_text(&report, inst.n(), args.format));
    eprintln!("solver_ms={}", ms(report.wall_time));
    if let Some(dir) = &args.trace_dir {
        let mut buf = Vec::new();
        write_trace_csv(&report.traces, &mut buf).map_err(|e| Failure::io(e.to_string()))?;
        io::write_file(&dir.join("trace.csv"), &String::from_utf8_lossy(&buf))?;
    }
    if report.roots.is_empty() {
        return Err(Failure {
            code: 2,
            message: format!(
                "the system has no roots ({} of {} paths diverged, {} failed)",
                report.paths_diverged, report.paths_total, report.paths_failed
            ),
        });
    }
    Ok(())
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_gen(args: &GenArgs) -> Result<(), Failure> {
    let inst = generate_instance(
        args.n,
        args.m,
        args.noise.level(),
        args.shuffle_fraction,
        args.seed,
    )?;
    let truth = inst.ground_truth().expect("generated instances carry ground truth");
    let files = [
        (with_suffix(&args.out, ".A.csv"), io::matrix_to_csv(inst.a())),
        (with_suffix(&args.out, ".y.csv"), io::vector_to_csv(inst.y())),
        (
            with_suffix(&args.out, ".truth.json"),
            format!(
                "{}\n",
                serde_json::to_string_pretty(truth).expect("serializable")
            ),
        ),
    ];
    for (path, contents) in &files {
        io::write_file(path, contents)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Failure::io(format!("{}: {e}", args.config.display())))?;
    let mut cfg: ExperimentConfig = toml::from_str(&text)
        .map_err(|e| Failure::io(format!("{}: {e}", args.config.display())))?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = args.trials {
        cfg.trials = trials;
    }
    if let Some(t) = args.max_iters {
        cfg.max_iters = t;
    }
    if let Some(eps) = args.eps {
        cfg.eps = eps;
    }
    let mut records = run_benchmark(&cfg)?;
    for r in records.iter().filter(|r| r.failed()) {
        eprintln!(
            "trial seed {} ({}) failed: {}",
            r.seed,
            r.method.as_str(),
            r.error.as_deref().unwrap_or("")
        );
    }
    let summary = summarize(&records);
    if args.no_timings {
        for r in &mut records {
            r.solver_ms = f64::NAN;
            r.em_ms = f64::NAN;
        }
    }
    match args.format {
        Format::Csv => {
            let mut out = Vec::new();
            experiments::write_csv(&records, &mut out).map_err(|e| Failure::io(e.to_string()))?;
            out.push(b'\n');
            let mut shown = summary.clone();
            if args.no_timings {
                for s in &mut shown {
                    s.mean_solver_ms = f64::NAN;
                    s.mean_em_ms = f64::NAN;
                }
            }
            experiments::write_summary(&shown, &mut out).map_err(|e| Failure::io(e.to_string()))?;
            print!("{}", String::from_utf8_lossy(&out));
        }
        Format::Json => {
            let opt = |v: f64| (!args.no_timings).then_some(v);
            let trials: Vec<_> = records
                .iter()
                .map(|r| {
                    json!({
                        "seed": r.seed,
                        "method": r.method.as_str(),
                        "n": r.n,
                        "m": r.m,
                        "snr_db": r.snr_db,
                        "sigma": r.sigma,
                        "shuffle_fraction": r.shuffle_fraction,
                        "rel_error_pct": r.rel_error_pct,
                        "best_root_error_pct": r.best_root_error_pct,
                        "init_error_pct": r.init_error_pct,
                        "solver_ms": opt(r.solver_ms),
                        "em_ms": opt(r.em_ms),
                        "root_count": r.root_count,
                        "iterations": r.iterations,
                        "objective_trace": r.objective_trace,
                        "error": r.error,
                    })
                })
                .collect();
            let summary: Vec<_> = summary
                .iter()
                .map(|s| {
                    json!({
                        "method": s.method.as_str(),
                        "trials": s.trials,
                        "failures": s.failures,
                        "mean_rel_error_pct": s.mean_rel_error_pct,
                        "median_rel_error_pct": s.median_rel_error_pct,
                        "mean_init_error_pct": s.mean_init_error_pct,
                        "mean_best_root_error_pct": s.mean_best_root_error_pct,
                        "mean_solver_ms": opt(s.mean_solver_ms),
                        "mean_em_ms": opt(s.mean_em_ms),
                    })
                })
                .collect();
            let value = json!({ "trials": trials, "summary": summary });
            println!("{}", serde_json::to_string_pretty(&value).expect("serializable"));
        }
    }
    if records.iter().all(|r| r.failed()) {
        return Err(Failure {
            code: 2,
            message: "every trial failed".into(),
        });
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = configure_threads().and_then(|()| match &cli.command {
        Command::Estimate(a) => cmd_estimate(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Gen(a) => cmd_gen(a),
        Command::Bench(a) => cmd_bench(a),
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
