#![allow(clippy::approx_constant)]

use std::path::PathBuf;
use std::process::Command;

use dichotomy_cli::run;
use serde_json::{json, Value};

fn invoke(args: &[&str]) -> (i32, Value) {
    let argv = std::iter::once("dichotomy").chain(args.iter().copied());
    let out = run(argv);
    let report = serde_json::from_str(&out.output).unwrap_or_else(|e| panic!("bad JSON ({e}): {}", out.output));
    (out.exit_code, report)
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("dichotomy-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn write_problem(name: &str, problem: &Value) -> String {
    let path = scratch(name);
    std::fs::write(&path, serde_json::to_string_pretty(problem).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

fn s1_problem() -> Value {
    json!({
        "schema_version": 1,
        "n": 2,
        "interval": { "kind": "whole" },
        "matrices": { "generator": { "kind": "constant", "matrix": [[0.5, 0.0], [0.0, 2.0]] } },
        "projection": { "generator": { "kind": "constant", "matrix": [[1.0, 0.0], [0.0, 0.0]] } },
        "constants": { "form": "A", "L": 1.0, "alpha": 0.6931 }
    })
}

#[test]
fn verify_fixture_passes() {
    let (code, r) = invoke(&["verify", "--fixture", "S1", "--alpha", "0.6931", "--L", "1", "--window", "0:50"]);
    assert_eq!(code, 0);
    assert_eq!(r["verdict"], "pass");
    assert_eq!(r["command"], "verify");
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["payload"]["report"]["passed"], true);
}

#[test]
fn verify_rejects_too_fast_rate() {
    let (code, r) = invoke(&["verify", "--fixture", "S1", "--alpha", "0.8", "--L", "1", "--window", "0:50"]);
    assert_eq!(code, 1);
    assert_eq!(r["verdict"], "fail");
    assert!(r["payload"]["report"]["worst"].is_object());
}

#[test]
fn extension_through_singular_step_is_obstructed() {
    let (code, r) = invoke(&["extend", "--fixture", "S2a", "--to-zero"]);
    assert_eq!(code, 1);
    assert_eq!(r["payload"]["verdict"]["extendable"], false);
    assert_eq!(r["payload"]["verdict"]["obstruction"], "dimension_mismatch");
}

#[test]
fn backward_extension_produces_verified_certificate() {
    let (code, r) = invoke(&["extend", "--fixture", "S3r", "--to-zero"]);
    assert_eq!(code, 0, "{r}");
    assert_eq!(r["payload"]["verification"]["passed"], true);
    assert_eq!(r["payload"]["certificate"]["window"]["hi"], 0);
}

#[test]
fn unperturbed_constants_are_unchanged() {
    let (code, r) = invoke(&["constants", "--K", "1", "--alpha", "0.693147", "--delta", "0"]);
    assert_eq!(code, 0);
    let c = &r["payload"]["discrete"];
    assert_eq!(c["beta"].as_f64().unwrap(), 0.693147);
    assert_eq!(c["l"].as_f64().unwrap(), 1.0);
}

#[test]
fn inadmissible_perturbation_is_a_negative_verdict() {
    let (code, r) = invoke(&["constants", "--K", "1", "--alpha", "0.693147", "--delta", "1"]);
    assert_eq!(code, 1);
    assert_eq!(r["payload"]["admissible"], false);
    let (code, r) = invoke(&["perturb", "--fixture", "S1", "--delta", "10"]);
    assert_eq!(code, 1);
    assert_eq!(r["error_code"], "not_admissible");
}

#[test]
fn small_perturbation_keeps_rank() {
    let args = ["perturb", "--fixture", "S1", "--delta", "0.1", "--window", "-60:60", "--region", "-2:2", "--seed", "3"];
    let (code, r) = invoke(&args);
    assert_eq!(code, 0, "{r}");
    assert_eq!(r["payload"]["report"]["rank_preserved"], true);
    assert_eq!(r["payload"]["perturbed_projections"].as_array().unwrap().len(), 5);
}

#[test]
fn output_is_deterministic() {
    for args in [
        &["perturb", "--fixture", "S1", "--delta", "0.05", "--window", "-40:40", "--seed", "11"][..],
        &["estimate", "--fixture", "S2b"][..],
        &["finite-time", "--fixture", "S1", "--N", "10", "--density", "5", "--K", "1", "--alpha", "0.69", "--M", "2", "--Kbar", "5", "--beta-bar", "0.3", "--scan", "0:40"][..],
    ] {
        let a = run(std::iter::once("dichotomy").chain(args.iter().copied()));
        let b = run(std::iter::once("dichotomy").chain(args.iter().copied()));
        assert_eq!(a, b, "{args:?}");
    }
}

#[test]
fn bad_input_exits_with_two() {
    let cases: [&[&str]; 6] = [
        &["verify", "--fixture", "nope", "--alpha", "1", "--L", "1"],
        &["verify", "--fixture", "S1", "--alpha", "-1", "--L", "1"],
        &["verify", "--fixture", "S1", "--alpha", "1", "--L", "1", "--window", "5:1"],
        &["verify", "--fixture", "S1", "--problem", "x.json"],
        &["project", "--fixture", "S1", "--side", "plus", "--subspace", "1,x"],
        &["frobnicate"],
    ];
    for args in cases {
        let (code, r) = invoke(args);
        assert_eq!(code, 2, "{args:?}: {r}");
        assert_eq!(r["verdict"], "error");
        assert!(r["error_code"].is_string());
    }
}

#[test]
fn problem_file_round_trip() {
    let path = write_problem("s1.json", &s1_problem());
    let (code, r) = invoke(&["verify", "--problem", &path, "--window", "-10:10"]);
    assert_eq!(code, 0, "{r}");
    assert_eq!(r["payload"]["report"]["form"]["alpha"], 0.6931);

    let mut b = s1_problem();
    b["constants"] = json!({ "form": "B", "M": 1.0, "K": 1.0, "alpha": 0.6931 });
    let path = write_problem("s1b.json", &b);
    let (code, _) = invoke(&["verify", "--problem", &path, "--window", "0:20"]);
    assert_eq!(code, 0);
}

#[test]
fn malformed_problem_files_are_rejected() {
    let mut wrong_size = s1_problem();
    wrong_size["matrices"]["generator"]["matrix"] = json!([[1.0, 0.0, 0.0]]);
    let mut unknown_field = s1_problem();
    unknown_field["extra"] = json!(1);
    let mut bad_version = s1_problem();
    bad_version["schema_version"] = json!(99);
    for (name, p) in [("size.json", wrong_size), ("field.json", unknown_field), ("version.json", bad_version)] {
        let path = write_problem(name, &p);
        let (code, r) = invoke(&["verify", "--problem", &path]);
        assert_eq!(code, 2, "{name}: {r}");
    }
}

#[test]
fn periodic_problem_with_explicit_entries() {
    let problem = json!({
        "n": 2,
        "interval": { "kind": "half_plus", "a": 0 },
        "matrices": {
            "explicit": [{ "k": 0, "matrix": [[0.5, 0.0], [0.0, 0.0]] }],
            "generator": { "kind": "periodic", "matrices": [[[0.5, 0.0], [0.0, 2.0]], [[0.25, 0.0], [0.0, 3.0]]] }
        },
        "projection": { "generator": { "kind": "constant", "matrix": [[1.0, 0.0], [0.0, 0.0]] } }
    });
    let path = write_problem("periodic.json", &problem);
    let (code, r) = invoke(&["estimate", "--problem", &path, "--alpha", "0.6", "--window", "1:30"]);
    assert_eq!(code, 0, "{r}");
    assert!(r["payload"]["measured"]["l"].as_f64().unwrap() >= 1.0);
}

#[test]
fn convert_inflates_constants_by_k() {
    let (code, r) = invoke(&["convert", "--L", "2", "--alpha", "0.5", "--to", "B"]);
    assert_eq!(code, 0);
    assert_eq!(r["payload"]["after"]["form"], "B");
    assert!(r["payload"]["inflation"].as_f64().unwrap() >= 1.0);
}

#[test]
fn fixtures_are_listed() {
    let (code, r) = invoke(&["fixtures"]);
    assert_eq!(code, 0);
    let labels: Vec<&str> = r["payload"]["fixtures"].as_array().unwrap().iter().map(|f| f["label"].as_str().unwrap()).collect();
    assert!(labels.contains(&"S1") && labels.contains(&"S3r"));
}

#[test]
fn help_mentions_natural_logs() {
    let out = run(["dichotomy", "--help"]);
    assert_eq!(out.exit_code, 0);
    assert!(out.output.contains("natural-log"));
}

#[test]
fn binary_exit_codes_and_out_file() {
    let exe = env!("CARGO_BIN_EXE_dichotomy");
    let out = scratch("verify.json");
    let status = Command::new(exe)
        .args(["verify", "--fixture", "S1", "--alpha", "0.6931", "--L", "1", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(r["verdict"], "pass");

    let status = Command::new(exe).args(["extend", "--fixture", "S2a", "--to-zero"]).output().unwrap();
    assert_eq!(status.status.code(), Some(1));
    let status = Command::new(exe).args(["verify"]).output().unwrap();
    assert_eq!(status.status.code(), Some(2));
}

#[test]
fn tolerance_environment_override() {
    let exe = env!("CARGO_BIN_EXE_dichotomy");
    let out = Command::new(exe)
        .args(["verify", "--fixture", "S1", "--alpha", "0.6931", "--L", "1"])
        .env("DICHOTOMY_TOL", r#"{"residual": 1e-6}"#)
        .output()
        .unwrap();
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["tolerances"]["residual"], 1e-6);
    assert_eq!(r["tolerances"]["rank"], 1e-9);

    let out = Command::new(exe)
        .args(["verify", "--fixture", "S1", "--alpha", "0.6931", "--L", "1"])
        .env("DICHOTOMY_TOL", "not json")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
