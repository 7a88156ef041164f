use std::path::Path;
use std::process::{Command, Output};

use schmidt_probe::io;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_schmidt-probe"));
    c.env_remove("SCHMIDT_PROBE_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn non_prime_dimension_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.json");
    let o = run(&["generate", "--p", "4", "--seed", "1", "--out", p(&out)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("4 is not prime"));
    assert!(!out.exists());
}

#[test]
fn generate_is_deterministic_and_valid() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for path in [&a, &b] {
        let o = run(&["generate", "--p", "3", "--real", "--seed", "42", "--out", p(path)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let e = io::read_state(&a).unwrap();
    assert!(e.validate().is_empty());
    assert!(e.is_real());
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let o = bin()
        .args(["generate", "--p", "5", "--out", p(&a)])
        .env("SCHMIDT_PROBE_SEED", "17")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    run(&["generate", "--p", "5", "--seed", "17", "--out", p(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn orthogonal_uniform_state_has_trivial_s0_row() {
    let dir = tempfile::tempdir().unwrap();
    let state = dir.path().join("s.json");
    std::fs::write(
        &state,
        r#"{"p": 3, "real": true, "lambdas": [0.3333333333333333, 0.3333333333333333, 0.3333333333333334],
            "gram_re": [[1,0,0],[0,1,0],[0,0,1]], "gram_im": [[0,0,0],[0,0,0],[0,0,0]]}"#,
    )
    .unwrap();
    let meas = dir.path().join("m.json");
    let o = run(&["simulate", "--state", p(&state), "--out", p(&meas)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = io::read_record(&meas).unwrap();
    assert_eq!(r.get(0, 0).re, 1.0);
    for k in 1..3 {
        assert!(r.get(0, k).norm() < 1e-15);
    }
}

#[test]
fn oracle_and_formula_files_agree() {
    let dir = tempfile::tempdir().unwrap();
    let state = dir.path().join("s.json");
    run(&["generate", "--p", "5", "--seed", "3", "--out", p(&state)]);
    let f = dir.path().join("f.json");
    let g = dir.path().join("g.json");
    assert_eq!(code(&run(&["simulate", "--state", p(&state), "--out", p(&f)])), 0);
    let o = run(&["simulate", "--state", p(&state), "--oracle", "--ambient-dim", "7", "--out", p(&g)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (f, g) = (io::read_record(&f).unwrap(), io::read_record(&g).unwrap());
    assert!(f.max_deviation(&g.a) < 1e-10);
    assert_eq!(g.source.as_str(), "vector-oracle");
}

#[test]
fn noisy_simulation_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let state = dir.path().join("s.json");
    run(&["generate", "--p", "3", "--real", "--seed", "8", "--out", p(&state)]);
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for path in [&a, &b] {
        let o = run(&[
            "simulate", "--state", p(&state), "--noise-sigma", "1e-3", "--seed", "5", "--out",
            p(path),
        ]);
        assert_eq!(code(&o), 0);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(io::read_record(&a).unwrap().seed, Some(5));
}

#[test]
fn p3_record_round_trips_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let state = dir.path().join("s.json");
    let meas = dir.path().join("m.json");
    let rec = dir.path().join("r.json");
    run(&["generate", "--p", "3", "--real", "--seed", "42", "--out", p(&state)]);
    run(&["simulate", "--state", p(&state), "--out", p(&meas)]);
    let o = run(&["reconstruct", "--meas", p(&meas), "--method", "p3", "--out", p(&rec)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let res = io::read_reconstruction(&rec).unwrap();
    assert!(res.residual <= 1e-9);
    let truth = io::read_state(&state).unwrap().parameters();
    let (dl, dx) = res.parameters().max_error(&truth);
    assert!(dl < 1e-9 && dx < 1e-9);
}

#[test]
fn method_dimension_mismatch_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let state = dir.path().join("s.json");
    let meas = dir.path().join("m.json");
    run(&["generate", "--p", "2", "--seed", "1", "--out", p(&state)]);
    run(&["simulate", "--state", p(&state), "--out", p(&meas)]);
    let o = run(&["reconstruct", "--meas", p(&meas), "--method", "p3", "--out", p(&dir.path().join("r.json"))]);
    assert_eq!(code(&o), 1);
}

#[test]
fn complex_record_with_real_solver_is_a_solver_failure() {
    let dir = tempfile::tempdir().unwrap();
    let state = dir.path().join("s.json");
    let meas = dir.path().join("m.json");
    run(&["generate", "--p", "3", "--seed", "4", "--out", p(&state)]);
    run(&["simulate", "--state", p(&state), "--out", p(&meas)]);
    let o = run(&[
        "reconstruct", "--meas", p(&meas), "--method", "real-general", "--out",
        p(&dir.path().join("r.json")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("inconsistent"));
}

#[test]
fn malformed_files_are_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{not json").unwrap();
    let out = dir.path().join("o.json");
    assert_eq!(code(&run(&["simulate", "--state", p(&bad), "--out", p(&out)])), 1);
    assert_eq!(code(&run(&["reconstruct", "--meas", p(&bad), "--method", "p2", "--out", p(&out)])), 1);
    let missing = dir.path().join("missing.json");
    assert_eq!(code(&run(&["simulate", "--state", p(&missing), "--out", p(&out)])), 1);
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["generate", "--p"])), 1);
    assert_eq!(code(&run(&["reconstruct", "--meas", "x", "--method", "magic", "--out", "y"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn roundtrip_reports_are_reproducible_apart_from_timestamp() {
    let dir = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for name in ["a.json", "b.json"] {
        let out = dir.path().join(name);
        let o = run(&["roundtrip", "--p", "3", "--real", "--trials", "20", "--seed", "9", "--out", p(&out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let mut v: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
        v["timestamp"] = serde_json::Value::Null;
        reports.push(v);
    }
    assert_eq!(reports[0], reports[1]);
    let agg = &reports[0]["aggregates"];
    assert_eq!(agg["failures"], 0);
    assert!(agg["max_error"].as_f64().unwrap() <= 1e-8);
}

#[test]
fn qubit_roundtrip_passes_gate() {
    let o = run(&["roundtrip", "--p", "2", "--trials", "50", "--seed", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["command"]["flags"]["method"], "p2");
}

#[test]
fn verify_passes_and_counts_bases() {
    let o = run(&["verify", "--p", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let unbiased = v["invariants"]
        .as_array()
        .unwrap()
        .iter()
        .find(|i| i["name"] == "unbiasedness")
        .unwrap();
    assert_eq!(unbiased["detail"], "3 bases");
    assert_eq!(code(&run(&["verify", "--p", "7"])), 0);
}
