//! Black-box tests of the `itecp` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn itecp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_itecp"))
        .args(args)
        .env_remove("ITECP_THREADS")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

/// Rows of a headered CSV with no quoting, as numbers keyed by column.
fn read_columns(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let (header, rows) = read_columns(path);
    let j = header.iter().position(|h| h == name).unwrap();
    rows.iter().map(|r| r[j]).collect()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SCENARIO: &str = r#"{"sigma_kind": "homoscedastic", "gamma": 1, "n": 800, "n_test": 120, "seed": 5}"#;

fn simulate(dir: &Path) -> (String, String) {
    let cfg = write(dir, "scenario.json", SCENARIO);
    let out = dir.join("data");
    let o = itecp(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    (
        out.join("train.csv").to_str().unwrap().to_string(),
        out.join("test.csv").to_str().unwrap().to_string(),
    )
}

#[test]
fn simulate_writes_row_counts_and_reports_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = simulate(dir.path());
    assert_eq!(read_columns(Path::new(&train)).1.len(), 800);
    assert_eq!(read_columns(Path::new(&test)).1.len(), 120);
    let a = column(Path::new(&train), "a");
    assert!(a.iter().all(|v| *v == 0.0 || *v == 1.0));
}

#[test]
fn simulate_seed_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.json", SCENARIO);
    let run = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let mut args = vec!["simulate", "--config", &cfg, "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        let o = itecp(&args);
        assert!(o.status.success());
        (stdout(&o), fs::read(out.join("train.csv")).unwrap())
    };
    let (head_cfg, from_cfg) = run("a", &[]);
    assert!(head_cfg.contains("root seed 5"));
    let (_, again) = run("b", &["--seed", "5"]);
    assert_eq!(from_cfg, again);
    let (head_flag, other) = run("c", &["--seed", "6"]);
    assert!(head_flag.contains("root seed 6"));
    assert_ne!(from_cfg, other);
}

#[test]
fn config_errors_name_the_keys() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let out = out.to_str().unwrap();
    let missing = write(dir.path(), "m.json", r#"{"sigma_kind": "homoscedastic"}"#);
    let o = itecp(&["simulate", "--config", &missing, "--out", out]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("gamma"), "{}", stderr(&o));

    let unknown = write(dir.path(), "u.json", r#"{"sigma_kind": "homoscedastic", "gamma": 0, "nn": 1, "sed": 2}"#);
    let o = itecp(&["simulate", "--config", &unknown, "--out", out]);
    assert_eq!(o.status.code(), Some(1));
    let msg = stderr(&o);
    assert!(msg.contains("nn") && msg.contains("sed"), "{msg}");
}

#[test]
fn run_produces_finite_intervals_and_exact_is_wider_than_x() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = simulate(dir.path());
    let mut mean_len = Vec::new();
    for variant in ["exact", "x"] {
        let cfg = write(dir.path(), &format!("{variant}.json"), &format!(r#"{{"variant": "{variant}"}}"#));
        let out = dir.path().join(variant);
        let o = itecp(&["run", "--train", &train, "--test", &test, "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        let path = out.join("intervals.csv");
        let (lo, hi) = (column(&path, "lo"), column(&path, "hi"));
        assert_eq!(lo.len(), 120);
        assert!(lo.iter().zip(&hi).all(|(l, h)| l.is_finite() && h.is_finite() && l <= h));
        // the test columns are carried through unchanged
        assert_eq!(column(&path, "x0"), column(Path::new(&test), "x0"));
        mean_len.push(lo.iter().zip(&hi).map(|(l, h)| h - l).sum::<f64>() / lo.len() as f64);
    }
    assert!(mean_len[0] >= mean_len[1], "{mean_len:?}");
}

#[test]
fn run_rejects_bad_variant_and_bad_schema() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = simulate(dir.path());
    let out = dir.path().join("o");
    let out = out.to_str().unwrap();
    let cfg = write(dir.path(), "v.json", r#"{"variant": "fancy"}"#);
    let o = itecp(&["run", "--train", &train, "--test", &test, "--config", &cfg, "--out", out]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("fancy"));

    let no_treatment = write(dir.path(), "bad.csv", "x0,x1,y\n0.1,0.2,1.0\n0.3,0.4,2.0\n");
    let o = itecp(&["run", "--train", &no_treatment, "--test", &test, "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!stderr(&o).is_empty());
}

fn small_experiment(dir: &Path) -> String {
    write(
        dir,
        "exp.json",
        r#"{
            "scenarios": [{"sigma_kind": "heteroscedastic", "gamma": 0, "n": 600, "n_test": 100}],
            "methods": [{"score": "cd", "variant": "exact"}, {"score": "cqr", "variant": "naive"}],
            "replications": 2,
            "conformal": {"grid_points": 256}
        }"#,
    )
}

#[test]
fn benchmark_outputs_are_reproducible_and_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_experiment(dir.path());
    let run = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let mut args = vec!["benchmark", "--config", &cfg, "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        let o = itecp(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains("CD-Exact"));
        (
            fs::read(out.join("metrics.csv")).unwrap(),
            fs::read(out.join("points.csv")).unwrap(),
        )
    };
    let a = run("a", &["--seed", "11"]);
    let b = run("b", &["--seed", "11", "--threads", "1"]);
    assert_eq!(a, b);
    let c = run("c", &["--seed", "12"]);
    assert_ne!(a.0, c.0);
    let header = String::from_utf8(a.0).unwrap();
    assert!(header.starts_with("method,scenario,coverage,coverage_se,avg_len,len_se\n"));
}

#[test]
fn benchmark_rejects_empty_methods() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "e.json", r#"{"methods": []}"#);
    let out = dir.path().join("o");
    let o = itecp(&["benchmark", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("methods"));
}

#[test]
fn zero_threads_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = itecp(&["benchmark", "--threads", "0", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}
