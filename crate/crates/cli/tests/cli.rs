use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_unshuffle"));
    cmd.env_remove("UNSHUFFLE_THREADS");
    cmd
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn write(dir: &TempDir, name: &str, contents: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, contents).unwrap();
    p
}

fn field<'a>(text: &'a str, key: &str) -> Vec<&'a str> {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key},")))
        .unwrap_or_else(|| panic!("no {key} line in {text}"))
        .split(',')
        .collect()
}

fn floats(parts: &[&str]) -> Vec<f64> {
    parts.iter().map(|p| p.parse().unwrap()).collect()
}

fn three_row_data(dir: &TempDir) {
    write(dir, "A.csv", "-1,-2\n2,-3\n0,4\n");
    write(dir, "y.csv", "8\n-5\n-4\n");
}

#[test]
fn estimate_recovers_the_three_row_example() {
    let dir = TempDir::new().unwrap();
    three_row_data(&dir);
    let out = run(&["estimate", "A.csv", "y.csv"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let xi = floats(&field(&text, "xi"));
    assert!((xi[0] - 1.0).abs() < 1e-9 && (xi[1] - 2.0).abs() < 1e-9, "{xi:?}");
    assert_eq!(field(&text, "perm"), vec!["1", "2", "0"]);
    assert_eq!(field(&text, "init_source"), vec!["algebraic"]);
    assert!(floats(&field(&text, "objective"))[0] < 1e-9);
    assert!(stderr(&out).contains("solver_ms="));

    let json = run(&["estimate", "A.csv", "y.csv", "--format", "json"], dir.path());
    let v: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!(v["perm"], serde_json::json!([1, 2, 0]));
    assert_eq!(v["root_count"], 2);
}

#[test]
fn solve_lists_both_roots_of_the_three_row_example() {
    let dir = TempDir::new().unwrap();
    three_row_data(&dir);
    let out = run(&["solve", "A.csv", "y.csv"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let (roots, stats) = text.split_once("\n\n").unwrap();
    let mut found: Vec<(f64, f64)> = roots
        .lines()
        .skip(1)
        .map(|l| {
            let p: Vec<f64> = l.split(',').skip(4).map(|s| s.parse().unwrap()).collect();
            assert!(p[1].abs() < 1e-9 && p[3].abs() < 1e-9);
            (p[0], p[2])
        })
        .collect();
    found.sort_by(|a, b| a.0.total_cmp(&b.0));
    assert_eq!(found.len(), 2);
    assert!((found[0].0 + 38.0 / 13.0).abs() < 1e-9 && (found[0].1 + 25.0 / 13.0).abs() < 1e-9);
    assert!((found[1].0 - 1.0).abs() < 1e-9 && (found[1].1 - 2.0).abs() < 1e-9);
    let stat_lines: Vec<&str> = stats.lines().collect();
    assert!(stat_lines[0].starts_with("paths_total,"));
    assert!(stat_lines[1].starts_with("2,2,0,0,"));

    fs::create_dir(dir.path().join("tr")).unwrap();
    let traced = run(&["solve", "A.csv", "y.csv", "--trace-dir", "tr"], dir.path());
    assert!(traced.status.success());
    assert!(fs::read_to_string(dir.path().join("tr/trace.csv")).unwrap().lines().count() > 2);
}

#[test]
fn inconsistent_data_exit_with_code_two() {
    let dir = TempDir::new().unwrap();
    write(&dir, "A.csv", "-2,-1\n2,-3\n0,4\n");
    write(&dir, "y.csv", "8\n-5\n-4\n");
    for cmd in ["estimate", "solve"] {
        let out = run(&[cmd, "A.csv", "y.csv"], dir.path());
        assert_eq!(out.status.code(), Some(2), "{cmd}: {}", stderr(&out));
    }
}

#[test]
fn usage_and_validation_errors_exit_with_code_one() {
    let dir = TempDir::new().unwrap();
    three_row_data(&dir);
    write(&dir, "short.csv", "8\n-5\n");
    let out = run(&["estimate", "A.csv", "short.csv"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("length 2"), "{}", stderr(&out));

    write(&dir, "bad.csv", "1,2\n3,oops\n");
    let out = run(&["solve", "bad.csv", "y.csv"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("bad.csv:2: column 2"), "{}", stderr(&out));

    let out = run(&["solve", "missing.csv", "y.csv"], dir.path());
    assert_eq!(out.status.code(), Some(1));

    let out = run(&["gen", "--n", "2", "--m", "5", "--out", "x"], dir.path());
    assert_eq!(out.status.code(), Some(1), "noise level is required");
    let out = run(
        &["gen", "--n", "2", "--m", "5", "--sigma", "0", "--snr-db", "3", "--out", "x"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1), "noise flags conflict");

    let out = run(&["solve", "A.csv", "y.csv", "--min-step", "-1"], dir.path());
    assert_eq!(out.status.code(), Some(1));

    let out = bin()
        .args(["solve", "A.csv", "y.csv"])
        .current_dir(dir.path())
        .env("UNSHUFFLE_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn seven_unknowns_are_refused() {
    let dir = TempDir::new().unwrap();
    let out = run(
        &["gen", "--n", "7", "--m", "12", "--sigma", "0", "--out", "big"],
        dir.path(),
    );
    assert!(out.status.success());
    for cmd in ["estimate", "solve"] {
        let out = run(&[cmd, "big.A.csv", "big.y.csv"], dir.path());
        assert_eq!(out.status.code(), Some(1));
        assert!(stderr(&out).contains("maximum of 6"), "{}", stderr(&out));
    }
}

#[test]
fn gen_is_reproducible_and_consistent_with_estimate() {
    let dir = TempDir::new().unwrap();
    let args = ["gen", "--n", "3", "--m", "40", "--sigma", "0", "--seed", "5"];
    for prefix in ["a", "b"] {
        let mut full = args.to_vec();
        full.extend(["--out", prefix]);
        assert!(run(&full, dir.path()).status.success());
    }
    for suffix in ["A.csv", "y.csv", "truth.json"] {
        let a = fs::read(dir.path().join(format!("a.{suffix}"))).unwrap();
        let b = fs::read(dir.path().join(format!("b.{suffix}"))).unwrap();
        assert_eq!(a, b, "{suffix}");
    }
    let truth: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("a.truth.json")).unwrap()).unwrap();
    let out = run(&["estimate", "a.A.csv", "a.y.csv"], dir.path());
    assert!(out.status.success());
    let text = stdout(&out);
    let xi = floats(&field(&text, "xi"));
    for (k, x) in xi.iter().enumerate() {
        let t = truth["xi_star"][k].as_f64().unwrap();
        assert!((x - t).abs() <= 1e-8 * (1.0 + t.abs()));
    }
    let perm: Vec<u64> = field(&text, "perm").iter().map(|p| p.parse().unwrap()).collect();
    let expected: Vec<u64> = truth["pi_star"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    assert_eq!(perm, expected);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    assert!(run(
        &["gen", "--n", "4", "--m", "300", "--snr-db", "30", "--seed", "2", "--out", "d"],
        dir.path()
    )
    .status
    .success());
    write(
        &dir,
        "bench.toml",
        "n = 3\nm = 60\nsnr_db = 40.0\ntrials = 3\nmethods = [\"ai_em\", \"ls_init_em\"]\n",
    );
    let cases: [&[&str]; 4] = [
        &["estimate", "d.A.csv", "d.y.csv"],
        &["solve", "d.A.csv", "d.y.csv", "--format", "json"],
        &["bench", "--config", "bench.toml", "--no-timings"],
        &["bench", "--config", "bench.toml", "--no-timings", "--format", "json"],
    ];
    for args in cases {
        let first = run(args, dir.path());
        assert!(first.status.success(), "{args:?}: {}", stderr(&first));
        let single = bin()
            .args(args)
            .current_dir(dir.path())
            .env("UNSHUFFLE_THREADS", "1")
            .output()
            .unwrap();
        assert_eq!(first.stdout, single.stdout, "{args:?}");
        assert_eq!(first.stdout, run(args, dir.path()).stdout, "{args:?}");
    }
}

#[test]
fn bench_reports_trials_and_summary() {
    let dir = TempDir::new().unwrap();
    write(
        &dir,
        "bench.toml",
        "n = 2\nm = 8\nsigma = 0.0\ntrials = 2\nseed = 10\n\
         methods = [\"ai_em\", \"ls_init_em\", \"brute_force\"]\n",
    );
    let out = run(&["bench", "--config", "bench.toml", "--no-timings"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let (trials, summary) = text.split_once("\n\n").unwrap();
    let rows: Vec<&str> = trials.lines().skip(1).collect();
    assert_eq!(rows.len(), 6);
    assert!(rows[0].starts_with("10,ai_em,2,8,"));
    assert!(rows[5].starts_with("11,brute_force,"));
    for row in &rows {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols[10], "", "timing column should be blank: {row}");
        if cols[1] != "ls_init_em" {
            assert!(cols[7].parse::<f64>().unwrap() < 1e-6, "{row}");
        }
    }
    assert_eq!(summary.lines().count(), 4);

    let out = run(&["bench", "--config", "bench.toml", "--trials", "0"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    write(&dir, "typo.toml", "n = 2\nm = 8\nsigma = 0.0\ntrails = 2\n");
    let out = run(&["bench", "--config", "typo.toml"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("trails"));
}
