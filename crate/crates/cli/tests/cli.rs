use std::path::Path;
use std::process::{Command, Output};

fn fracpinn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fracpinn"))
        .args(args)
        .env_remove("FRACPINN_SEED")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn report_without_timings(dir: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(dir.join("report.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v.as_object_mut().unwrap().remove("timings");
    v
}

const SHORT: &[&str] = &[
    "--n",
    "21",
    "--adam-epochs",
    "15",
    "--lbfgs-iters",
    "5",
    "--progress",
    "0",
];

fn solve(extra: &[&str], out: &Path) -> Output {
    let mut args = vec!["solve"];
    args.extend_from_slice(SHORT);
    args.extend_from_slice(extra);
    args.extend_from_slice(&["--out", out.to_str().unwrap()]);
    fracpinn(&args)
}

#[test]
fn validate_passes_and_mutation_fails() {
    let ok = fracpinn(&["validate"]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stdout));
    let stdout = String::from_utf8_lossy(&ok.stdout);
    assert_eq!(stdout.lines().count(), 8);
    assert!(!stdout.contains("FAIL"));

    let bad = fracpinn(&["validate", "--perturb-weight", "1e-3"]);
    assert_eq!(code(&bad), 2);
    let stdout = String::from_utf8_lossy(&bad.stdout);
    assert!(stdout
        .lines()
        .any(|l| l.starts_with("FAIL") && l.contains("row-sums")));
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&fracpinn(&["solve", "--example", "9"])), 1);
    assert_eq!(code(&fracpinn(&["solve"])), 1);
    assert_eq!(
        code(&fracpinn(&[
            "solve",
            "--example",
            "3",
            "--problem",
            "x.toml"
        ])),
        1
    );
    assert_eq!(code(&fracpinn(&["frobnicate"])), 1);
    assert_eq!(
        code(&fracpinn(&[
            "solve",
            "--example",
            "3",
            "--deterministic",
            "--adam-epochs",
            "1"
        ])),
        1
    );
    assert_eq!(code(&fracpinn(&["--help"])), 0);
}

#[test]
fn solve_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = solve(&["--example", "7", "--seed", "3"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in [
        "report.json",
        "solution.csv",
        "trace.csv",
        "timings.csv",
        "network_y1.json",
        "network_y3.json",
    ] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
    let csv = std::fs::read_to_string(dir.path().join("solution.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("state,x,predicted,exact,abs_error"));
    assert_eq!(lines.count(), 3 * 300);
    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(trace.starts_with("iteration,phase,loss,gradient_norm\n"));
    let report = report_without_timings(dir.path());
    assert_eq!(report["seed"], 3);
    assert_eq!(report["states"].as_array().unwrap().len(), 3);
}

#[test]
fn seeded_runs_are_identical_across_thread_counts() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut one = vec!["--threads", "1", "solve"];
    one.extend_from_slice(SHORT);
    one.extend_from_slice(&[
        "--example",
        "5",
        "--seed",
        "11",
        "--deterministic",
        "--out",
        a.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&fracpinn(&one)), 0);
    let out = solve(
        &["--example", "5", "--seed", "11", "--deterministic"],
        b.path(),
    );
    assert_eq!(code(&out), 0);
    assert_eq!(
        report_without_timings(a.path()),
        report_without_timings(b.path())
    );
    let sa = std::fs::read_to_string(a.path().join("solution.csv")).unwrap();
    let sb = std::fs::read_to_string(b.path().join("solution.csv")).unwrap();
    assert_eq!(sa, sb);
}

#[test]
fn environment_overrides_flags_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_fracpinn"))
        .args([
            "solve",
            "--example",
            "3",
            "--n",
            "11",
            "--progress",
            "0",
            "--out",
        ])
        .arg(dir.path())
        .env("FRACPINN_ADAM_EPOCHS", "4")
        .env("FRACPINN_LBFGS_ITERS", "0")
        .env("FRACPINN_SEED", "2")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = report_without_timings(dir.path());
    assert_eq!(report["trace"].as_array().unwrap().len(), 4);
    assert_eq!(report["seed"], 2);
}

#[test]
fn template_round_trips_and_reports_bad_lines() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("problem.toml");
    assert_eq!(code(&fracpinn(&["template", path.to_str().unwrap()])), 0);
    let out = solve(
        &["--problem", path.to_str().unwrap(), "--seed", "1"],
        &dir.path().join("run"),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let text = std::fs::read_to_string(&path).unwrap();
    let (line, _) = text
        .lines()
        .enumerate()
        .find(|(_, l)| l.trim_start().starts_with("residual"))
        .unwrap();
    let broken: String = text
        .lines()
        .enumerate()
        .map(|(i, l)| {
            if i == line {
                "residual = \"y' = 0.5*y(q*x) - - * y\"".to_string()
            } else {
                l.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join("\n");
    let bad = dir.path().join("broken.toml");
    std::fs::write(&bad, broken).unwrap();
    let out = solve(
        &["--problem", bad.to_str().unwrap(), "--seed", "1"],
        &dir.path().join("run2"),
    );
    assert_eq!(code(&out), 1);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains(&format!("line {}", line + 1)), "{stderr}");
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = fracpinn(&[
        "solve",
        "--example",
        "6",
        "--adam-epochs",
        "50",
        "--lbfgs-iters",
        "0",
        "--lr",
        "1e4",
        "--seed",
        "1",
        "--progress",
        "0",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
}

#[test]
fn bench_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = fracpinn(&[
        "bench",
        "--n",
        "11,21",
        "--epochs",
        "2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}
