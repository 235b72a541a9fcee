use std::process::{Command, Output};

use approx::assert_relative_eq;

use stepmoments::coalescence::{coalescence_vector, CoalescenceVector, PopulationHistory};
use stepmoments::hankel::{Decision, MembershipResult};
use stepmoments::oracle::FitResult;
use stepmoments::MomentVector;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_stepmoments"));
    c.env_remove("STEPMOMENTS_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("run binary")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn moments_of_constant_density() {
    let o = run(&[
        "moments",
        "--A",
        "0,2,5,9",
        "--step",
        r#"{"breakpoints":[],"heights":[1.0]}"#,
    ]);
    assert_eq!(o.status.code(), Some(0));
    let m: MomentVector = serde_json::from_slice(&o.stdout).unwrap();
    for (x, y) in m.values().iter().zip([1.0, 1.0 / 3.0, 1.0 / 6.0, 0.1]) {
        assert_relative_eq!(*x, y, max_relative = 1e-12);
    }
}

#[test]
fn moments_csv_row() {
    let o = run(&[
        "moments",
        "--A",
        "0,1",
        "--step",
        r#"{"breakpoints":[0.5],"heights":[0.0,2.0]}"#,
        "--format",
        "csv",
    ]);
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("m0,m1"));
    let row: Vec<f64> = lines
        .next()
        .unwrap()
        .split(',')
        .map(|s| s.parse().unwrap())
        .collect();
    assert_relative_eq!(row[0], 1.0, max_relative = 1e-15);
    assert_relative_eq!(row[1], 0.75, max_relative = 1e-15);
}

#[test]
fn coalesce_matches_library() {
    let history = r#"{"breakpoints":[2,5],"sizes":[2,3,1]}"#;
    let o = run(&["coalesce", "--history", history, "--n", "5"]);
    assert_eq!(o.status.code(), Some(0));
    let c: CoalescenceVector = serde_json::from_slice(&o.stdout).unwrap();
    let eta = PopulationHistory::new(vec![2.0, 5.0], vec![2.0, 3.0, 1.0]).unwrap();
    let lib = coalescence_vector(&eta, 5).unwrap();
    assert_eq!(c, lib);

    let o = run(&["coalesce", "--history", history, "--n", "5", "--normalize"]);
    let c: CoalescenceVector = serde_json::from_slice(&o.stdout).unwrap();
    assert!(c.normalized);
    assert_relative_eq!(c.values.iter().sum::<f64>(), 1.0, max_relative = 1e-14);
}

#[test]
fn invert_recovers_history() {
    let step = format!(
        r#"{{"breakpoints":[{},{}],"heights":[1,3,2]}}"#,
        (-2.0f64).exp(),
        (-1.0f64).exp()
    );
    let o = run(&["invert", "--step", &step]);
    assert_eq!(o.status.code(), Some(0));
    let eta: PopulationHistory = serde_json::from_slice(&o.stdout).unwrap();
    assert_relative_eq!(eta.breakpoints()[0], 2.0, max_relative = 1e-12);
    assert_relative_eq!(eta.breakpoints()[1], 5.0, max_relative = 1e-12);
    assert_eq!(eta.sizes(), &[2.0, 3.0, 1.0]);
}

#[test]
fn invert_rejects_zero_height() {
    let o = run(&[
        "invert",
        "--step",
        r#"{"breakpoints":[0.5],"heights":[0,1]}"#,
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn membership_of_constant_history_is_inside() {
    let o = run(&[
        "membership",
        "--n",
        "5",
        "--vector",
        "0.625,0.20833333333333334,0.10416666666666667,0.0625",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let r: MembershipResult = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r.decision, Decision::Inside);
}

#[test]
fn membership_outside_exits_three() {
    let o = run(&["membership", "--A", "0,1,2", "--vector", "1,0.5,0.1"]);
    assert_eq!(o.status.code(), Some(3));
    let r: MembershipResult = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r.decision, Decision::Outside);
}

#[test]
fn membership_cross_check_agrees() {
    let o = run(&[
        "membership",
        "--A",
        "0,2,5,9",
        "--vector",
        "1,0.3333333333333333,0.16666666666666666,0.1",
        "--cross-check",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["result"]["decision"], "inside");
    assert_eq!(v["oracle"]["agrees"], true);
}

#[test]
fn monotone_membership_flag() {
    let up = run(&[
        "membership",
        "--A",
        "0,1",
        "--vector",
        "1,0.25",
        "--monotone",
        "up",
    ]);
    assert_eq!(up.status.code(), Some(3));
    let down = run(&[
        "membership",
        "--A",
        "0,1",
        "--vector",
        "1,0.25",
        "--monotone",
        "down",
    ]);
    assert_eq!(down.status.code(), Some(0));
}

#[test]
fn emit_curve_rows() {
    let o = run(&[
        "emit-curve",
        "--A",
        "0,2,5,9",
        "--curve",
        "v",
        "--samples",
        "101",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 102);
    assert_eq!(lines[0], "m0,m2,m5,m9");
    let parse = |l: &str| -> Vec<f64> { l.split(',').map(|s| s.parse().unwrap()).collect() };
    assert_eq!(parse(lines[1]), vec![1.0, 0.0, 0.0, 0.0]);
    assert_eq!(parse(lines[101]), vec![1.0, 1.0, 1.0, 1.0]);
}

#[test]
fn fit_output_round_trips_and_is_reproducible() {
    let args = [
        "fit",
        "--A",
        "0,2,5,9",
        "--vector",
        "1,0.3,0.1,0.05",
        "--k",
        "3",
    ];
    let a = run(&args);
    let b = run(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let fit: FitResult = serde_json::from_slice(&a.stdout).unwrap();
    assert!(fit.residual <= 1e-6);
    let again = serde_json::to_string_pretty(&fit).unwrap() + "\n";
    assert_eq!(again.as_bytes(), &a.stdout[..]);
}

#[test]
fn seed_precedence() {
    let args = [
        "fiber",
        "--A",
        "0,2,5,9",
        "--vector",
        "1,0.3333333333333333,0.16666666666666666,0.1",
        "--k",
        "2",
        "--count",
        "3",
    ];
    let explicit = bin().args(args).args(["--seed", "7"]).output().unwrap();
    let from_env = bin()
        .args(args)
        .env("STEPMOMENTS_SEED", "7")
        .output()
        .unwrap();
    let both = bin()
        .args(args)
        .args(["--seed", "7"])
        .env("STEPMOMENTS_SEED", "8")
        .output()
        .unwrap();
    let other = bin().args(args).args(["--seed", "8"]).output().unwrap();
    assert_eq!(explicit.stdout, from_env.stdout);
    assert_eq!(explicit.stdout, both.stdout);
    assert_ne!(explicit.stdout, other.stdout);
    assert!(stdout(&explicit).starts_with("s1,s2,w1,w2,w3\n"));
}

#[test]
fn file_input_and_output() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("m.json");
    let output = dir.path().join("out.json");
    std::fs::write(
        &input,
        "[0.625, 0.20833333333333334, 0.10416666666666667, 0.0625]",
    )
    .unwrap();
    let o = run(&[
        "nearest",
        "--n",
        "5",
        "--input",
        input.to_str().unwrap(),
        "--output",
        output.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&output).unwrap()).unwrap();
    assert!(v["distance"].as_f64().unwrap() <= 1e-6);
}

#[test]
fn inline_and_file_together_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("m.txt");
    std::fs::write(&input, "1,0.5").unwrap();
    let o = run(&[
        "membership",
        "--A",
        "0,1",
        "--vector",
        "1,0.5",
        "--input",
        input.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(
        run(&["fit", "--A", "0,1", "--vector", "1,0.5"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(run(&["nosuch"]).status.code(), Some(1));
    assert_eq!(
        run(&["theorems", "--A", "0,1", "--format", "csv"])
            .status
            .code(),
        Some(1)
    );
    let o = bin()
        .args(["theorems", "--A", "0,1"])
        .env("STEPMOMENTS_SEED", "x")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn help_exits_zero() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn theorems_report_schema() {
    let o = run(&["theorems", "--A", "0,1", "--trials", "3"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    for r in v.as_array().unwrap() {
        for key in ["theorem", "A", "k", "trials", "max_residual", "pass"] {
            assert!(r.get(key).is_some(), "missing {key}");
        }
        assert_eq!(r["pass"], true);
    }
}
