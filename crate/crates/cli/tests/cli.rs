//! End-to-end tests of the `mkv` binary: exit codes, strict config handling,
//! and machine-readable outputs.

use std::path::Path;
use std::process::{Command, Output};

fn mkv(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mkv"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn list_models_names_the_zoo() {
    let dir = tempfile::tempdir().unwrap();
    let out = mkv(&["list-models"], dir.path());
    assert!(out.status.success());
    let text = stdout(&out);
    let names: Vec<&str> = text.lines().collect();
    assert!(names.len() >= 4, "{names:?}");
    assert!(names.contains(&"SGN_COUNTEREXAMPLE"));
}

#[test]
fn cost_output_is_reproducible_and_near_the_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "cost",
        "--model",
        "UNCONTROLLED_GAUSSIAN",
        "--s",
        "0",
        "--T",
        "1",
        "--particles",
        "2000",
        "--steps",
        "50",
        "--seed",
        "7",
        "--out",
        "cost.json",
    ];
    let first = mkv(&args, dir.path());
    assert!(first.status.success(), "{}", stderr(&first));
    let bytes_first = std::fs::read(dir.path().join("cost.json")).unwrap();

    let parsed: serde_json::Value = serde_json::from_slice(&bytes_first).unwrap();
    let mean = parsed["result"]["mean"].as_f64().unwrap();
    let se = parsed["result"]["std_error"].as_f64().unwrap();
    assert!((mean - 1.0).abs() <= 3.0 * se, "mean {mean}, se {se}");
    assert_eq!(parsed["seed"], 7);
    assert!(parsed["tool_version"].is_string());
    assert!(parsed["resolved_config"]["grid"]["steps"] == 50);

    // Same command twice: byte-identical output.
    let second = mkv(&args, dir.path());
    assert!(second.status.success());
    let bytes_second = std::fs::read(dir.path().join("cost.json")).unwrap();
    assert_eq!(bytes_first, bytes_second);
}

#[test]
fn simulate_exports_paths() {
    let dir = tempfile::tempdir().unwrap();
    let out = mkv(
        &[
            "simulate",
            "--model",
            "BANG_BANG_DET",
            "--s",
            "0",
            "--T",
            "0.5",
            "--steps",
            "10",
            "--particles",
            "4",
            "--seed",
            "3",
            "--out",
            "sim.json",
            "--csv-out",
            "paths.csv",
            "--bin-out",
            "paths.bin",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("paths.csv")).unwrap();
    assert!(csv.starts_with("step,particle,x0"));
    assert_eq!(csv.lines().count(), 1 + 11 * 4);
    let bin = std::fs::read(dir.path().join("paths.bin")).unwrap();
    // Header: N, M, d, seed as u64; then N * (M + 1) * d doubles.
    assert_eq!(bin.len(), 32 + 4 * 11 * 8);
    assert_eq!(u64::from_le_bytes(bin[24..32].try_into().unwrap()), 3);
}

#[test]
fn validate_accepts_well_formed_configs() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("good.json"),
        r#"{
            "subcommand": "cost",
            "model": "UNCONTROLLED_GAUSSIAN",
            "grid": {"s": 0.0, "t_end": 1.0, "steps": 100},
            "particles": 1000,
            "seed": 7
        }"#,
    )
    .unwrap();
    let out = mkv(&["validate", "good.json"], dir.path());
    assert!(out.status.success());
    assert!(stdout(&out).contains("OK"));
}

#[test]
fn validate_rejects_zero_steps_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("bad.json"),
        r#"{"model": "UNCONTROLLED_GAUSSIAN", "grid": {"s": 0.0, "t_end": 1.0, "steps": 0}}"#,
    )
    .unwrap();
    let out = mkv(&["validate", "bad.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("steps"), "{}", stderr(&out));
}

#[test]
fn validate_names_unknown_keys_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("typo.json"),
        r#"{"model": "UNCONTROLLED_GAUSSIAN", "partciles": 100}"#,
    )
    .unwrap();
    let out = mkv(&["validate", "typo.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("partciles"), "{}", stderr(&out));
    // Unreadable file is also a config error.
    let missing = mkv(&["validate", "nope.json"], dir.path());
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn verify_flow_property_passes_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("flow.json"),
        r#"{
            "subcommand": "verify",
            "model": "BANG_BANG_DET",
            "policy": {"type": "constant", "measure": {"dim": 1, "atoms": [[-1.0]]}},
            "grid": {"s": 0.0, "t_end": 0.5, "steps": 20},
            "particles": 50,
            "seed": 9,
            "check": {
                "name": "flow_property",
                "init": {"type": "dirac", "point": [1.0]},
                "t_mid": 0.25
            }
        }"#,
    )
    .unwrap();
    let out = mkv(
        &[
            "verify",
            "--check",
            "flow_property",
            "--config",
            "flow.json",
            "--out",
            "report.json",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("flow_property: pass"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["result"]["verdict"], "pass");
    assert_eq!(report["result"]["check_name"], "flow_property");
}

#[test]
fn verify_failing_check_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    // A model whose declared coefficient bound is far too small: the
    // tightness modulus must fail.
    std::fs::write(
        dir.path().join("model.json"),
        r#"{
            "name": "OVERCONFIDENT",
            "dim_state": 1,
            "dim_control": 1,
            "control_box": {"lo": [-1.0], "hi": [1.0]},
            "horizon": 1.0,
            "drift": ["1"],
            "diffusion": [["0"]],
            "running_cost": "0",
            "terminal_cost": "0",
            "constants": {"b_sup": 0.0001, "sigma_sup": 0.0}
        }"#,
    )
    .unwrap();
    std::fs::write(
        dir.path().join("check.json"),
        r#"{
            "model": {"file": "model.json"},
            "grid": {"s": 0.0, "t_end": 1.0, "steps": 10},
            "particles": 16,
            "seed": 4,
            "check": {
                "name": "tightness_modulus",
                "init": {"type": "dirac", "point": [0.0]}
            }
        }"#,
    )
    .unwrap();
    let out = mkv(&["verify", "--config", "check.json"], dir.path());
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(stdout(&out).contains("FAIL"));
}

#[test]
fn verify_with_mismatched_check_name_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("flow.json"),
        r#"{
            "model": "BANG_BANG_DET",
            "grid": {"s": 0.0, "t_end": 0.5, "steps": 10},
            "particles": 8,
            "seed": 9,
            "check": {"name": "flow_property", "init": {"type": "dirac", "point": [1.0]}, "t_mid": 0.25}
        }"#,
    )
    .unwrap();
    let out = mkv(
        &["verify", "--check", "stability", "--config", "flow.json"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn optimize_writes_value_estimate_with_policy() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("family.json"), r#"{"type":"constant_atom"}"#).unwrap();
    std::fs::write(
        dir.path().join("init.json"),
        r#"{"type": "dirac", "point": [1.0]}"#,
    )
    .unwrap();
    let out = mkv(
        &[
            "optimize",
            "--model",
            "BANG_BANG_DET",
            "--family",
            "family.json",
            "--init",
            "init.json",
            "--s",
            "0",
            "--T",
            "0.5",
            "--steps",
            "25",
            "--particles",
            "8",
            "--seed",
            "12",
            "--generations",
            "15",
            "--population",
            "12",
            "--out",
            "value.json",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("value.json")).unwrap())
            .unwrap();
    let value = parsed["result"]["cost"]["mean"].as_f64().unwrap();
    assert!((0.23..=0.27).contains(&value), "value {value}");
    assert_eq!(parsed["result"]["best_policy"]["type"], "constant");
    assert!(parsed["result"]["optimizer_gap"].as_f64().unwrap() >= 0.0);
}

#[test]
fn optimize_supports_grid_logits_families() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("family.json"),
        r#"{
            "type": "grid_logits",
            "time_knots": [0.0, 0.25, 1.0],
            "boxes": [],
            "atoms": [[-1.0], [0.0], [1.0]]
        }"#,
    )
    .unwrap();
    std::fs::write(
        dir.path().join("init.json"),
        r#"{"type": "dirac", "point": [1.0]}"#,
    )
    .unwrap();
    let out = mkv(
        &[
            "optimize",
            "--model",
            "BANG_BANG_DET",
            "--family",
            "family.json",
            "--init",
            "init.json",
            "--s",
            "0",
            "--T",
            "0.5",
            "--steps",
            "50",
            "--particles",
            "8",
            "--seed",
            "2",
            "--out",
            "value.json",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("value.json")).unwrap())
            .unwrap();
    let value = parsed["result"]["cost"]["mean"].as_f64().unwrap();
    assert!((0.23..=0.27).contains(&value), "value {value}");
    assert_eq!(parsed["result"]["best_policy"]["type"], "parametric");
}

#[test]
fn model_file_round_trips_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("ou.json"),
        r#"{
            "name": "FILE_OU",
            "dim_state": 1,
            "dim_control": 1,
            "control_box": {"lo": [-1.0], "hi": [1.0]},
            "horizon": 1.0,
            "drift": ["(m0 - x0) + u0"],
            "diffusion": [["0.5"]],
            "running_cost": "u0^2",
            "terminal_cost": "x0^2",
            "constants": {"k1": 1.0, "k2": 1.5}
        }"#,
    )
    .unwrap();
    let out = mkv(
        &[
            "cost",
            "--model-file",
            "ou.json",
            "--s",
            "0",
            "--T",
            "1",
            "--steps",
            "20",
            "--particles",
            "200",
            "--seed",
            "5",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("\"model\": \"FILE_OU\""));
}

#[test]
fn unknown_builtin_model_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = mkv(&["cost", "--model", "NO_SUCH_MODEL"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("NO_SUCH_MODEL"));
}
