//! End-to-end tests against the built binary: exit-code contract, report
//! determinism, CSV emission, input-error handling.

use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_varsode"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn tmp(name: &str) -> PathBuf {
    let mut p = std::env::temp_dir();
    p.push(format!("varsode-test-{}-{name}", std::process::id()));
    p
}

#[test]
fn example_all_pass_exits_zero() {
    let out = run(&["example", "harmonic_oscillator"]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let report = String::from_utf8(out.stdout).unwrap();
    assert!(report.contains("\"overall_pass\": true"));
}

#[test]
fn failing_check_exits_one() {
    // douglas expectations inverted: a passing helmholtz expectation on a
    // nonvariational instance must yield exit code 1
    let file = tmp("fail.problem");
    let text = "\
[space]
coords = x, y
[sode]
gamma = x*y, x*y
[fibermap]
id = xd, yd
[sampling]
box = x: 1..2; y: 1..2; xd: 1..2; yd: 1..2
[checks]
run = helmholtz
";
    std::fs::write(&file, text).unwrap();
    let out = run(&["check", file.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1), "{out:?}");
    std::fs::remove_file(&file).ok();
}

#[test]
fn input_errors_exit_two() {
    let out = run(&["check", "/nonexistent/path.problem"]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&["example", "unknown"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("rolling_disk"), "lists corpus: {err}");

    let file = tmp("bad.problem");
    std::fs::write(&file, "[space]\ncoords = x\n[sode]\ngamma = 1 + * 2\n").unwrap();
    let out = run(&["check", file.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::remove_file(&file).ok();
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let out_a = tmp("rep-a.json");
    let out_b = tmp("rep-b.json");
    let s = run(&["example", "douglas_case_iv", "--out", out_a.to_str().unwrap()]);
    assert_eq!(s.status.code(), Some(0));
    let s = run(&["example", "douglas_case_iv", "--out", out_b.to_str().unwrap()]);
    assert_eq!(s.status.code(), Some(0));
    let a = std::fs::read(&out_a).unwrap();
    let b = std::fs::read(&out_b).unwrap();
    assert_eq!(a, b);
    std::fs::remove_file(&out_a).ok();
    std::fs::remove_file(&out_b).ok();
}

#[test]
fn seed_override_changes_report() {
    let a = run(&["example", "harmonic_oscillator"]);
    let b = run(&["example", "harmonic_oscillator", "--seed", "9"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(b.status.code(), Some(0));
    assert_ne!(a.stdout, b.stdout);
    assert!(String::from_utf8(b.stdout).unwrap().contains("\"seed\": 9"));
}

#[test]
fn simulate_nonholonomic_disk_echoes_initial_state() {
    let file = tmp("disk.problem");
    std::fs::write(&file, varsode_core_problem_text()).unwrap();
    let out = run(&[
        "simulate",
        file.to_str().unwrap(),
        "--dynamics",
        "nonholonomic",
        "--x0",
        "0,0,0,0,1,1,1,0",
        "--t-final",
        "0.01",
        "--step",
        "0.001",
    ]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let csv = String::from_utf8(out.stdout).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "t,q1,q2,q3,q4,qd1,qd2,qd3,qd4,phi1,phi2"
    );
    let first = lines.next().unwrap();
    let fields: Vec<f64> = first.split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(
        fields,
        vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0]
    );
    std::fs::remove_file(&file).ok();
}

#[test]
fn unwritable_out_path_fails_nonzero() {
    let out = run(&[
        "example",
        "harmonic_oscillator",
        "--out",
        "/nonexistent-dir/report.json",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn extend_flow_subcommand() {
    let file = tmp("extdisk.problem");
    std::fs::write(&file, varsode_core_problem_text()).unwrap();
    let out = run(&["extend", file.to_str().unwrap(), "--method", "flow", "--samples", "16"]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let report = String::from_utf8(out.stdout).unwrap();
    assert!(report.contains("extend_flow"));
    std::fs::remove_file(&file).ok();
}

/// A self-contained rolling-disk problem file for the simulate/extend tests.
fn varsode_core_problem_text() -> &'static str {
    r#"
[space]
coords = theta, phi, x, y
free = theta, phi
[sode]
gamma = 0, 0
psi = cos(phi)*thetad, sin(phi)*thetad
[fibermap]
leg = 2*thetad, phid, 0, 0
[lagrangian]
L = (thetad^2 + phid^2 + xd^2 + yd^2)/2
[constraints]
mu = -cos(phi), 0, 1, 0 ; -sin(phi), 0, 0, 1
mu0 = 0, 0
[extend]
phi = xd - cos(phi)*thetad + mut_x, yd - sin(phi)*thetad + mut_y
reference_L = (thetad^2 + phid^2 - xd^2 - yd^2)/2 + thetad*(cos(phi)*xd + sin(phi)*yd)
[sampling]
box = thetad: 0.5..1.5; phid: 0.5..1.5
samples = 16
[checks]
run = ch
"#
}

#[test]
fn csv_format_for_reports() {
    let out = run(&["example", "douglas_case_iv", "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0));
    let csv = String::from_utf8(out.stdout).unwrap();
    assert!(csv.starts_with("check,fibermap,expected,passed,matched_expectation"));
    assert!(csv.contains("helmholtz,identity,Fail,false,true"));
}

#[test]
fn unsatisfiable_guards_exit_three() {
    let file = tmp("guards.problem");
    std::fs::write(
        &file,
        "[space]\ncoords = x\n[sode]\ngamma = -x\n[fibermap]\nid = xd\n\
         [sampling]\nguards = x > 10\n[checks]\nrun = helmholtz\n",
    )
    .unwrap();
    let out = run(&["check", file.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{out:?}");
    std::fs::remove_file(&file).ok();
}
