//! End-to-end CLI behavior: file round-trips, determinism, exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_probscale"))
}

fn run(args: &[&str]) -> Output {
    binary().args(args).output().expect("binary runs")
}

fn assert_exit(output: &Output, code: i32) {
    assert_eq!(
        output.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

fn json_file(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn synth_calibrate_validate_roundtrip_via_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cal_csv = dir.path().join("cal.csv");
    let val_csv = dir.path().join("val.csv");
    let report = dir.path().join("report.json");
    let violations = dir.path().join("violations.json");
    let bounds = dir.path().join("bounds.csv");

    // 0.2 / 0.01 gives a small N; read it off sample-size first.
    let size_json = dir.path().join("size.json");
    let out = run(&[
        "sample-size", "--epsilon", "0.2", "--delta", "0.01", "--out",
        size_json.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let n = json_file(&size_json)["n_samples"].as_u64().unwrap();

    let out = run(&[
        "synth-data", "--count", &n.to_string(), "--seed", "5", "--purpose", "calibration",
        "--out", cal_csv.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let out = run(&[
        "synth-data", "--count", "5000", "--seed", "5", "--purpose", "validation",
        "--out", val_csv.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);

    let out = run(&[
        "calibrate", "--epsilon", "0.2", "--delta", "0.01",
        "--data", cal_csv.to_str().unwrap(),
        "--sigma", "exact",
        "--out", report.to_str().unwrap(),
        "--emit-bounds", bounds.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let rep = json_file(&report);
    assert_eq!(rep["kind"], "conditioned");
    assert_eq!(rep["epsilon"], 0.2);
    assert!(rep["gamma_bar"].as_f64().unwrap() > 0.0);
    assert!(rep["config_hash"].as_str().unwrap().len() == 64);

    let out = run(&[
        "validate",
        "--calibration", report.to_str().unwrap(),
        "--data", val_csv.to_str().unwrap(),
        "--out", violations.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let val = json_file(&violations);
    assert_eq!(val["total"], 5000);
    let ratio = val["violation_ratio"].as_f64().unwrap();
    // Nominal 0.2 with generous Monte-Carlo slack.
    assert!(ratio < 0.3, "ratio = {ratio}");
    assert!(val["mean_bound_width"].as_f64().unwrap() > 0.0);

    // Emitted bound table: header plus one row per grid point, lo <= hi.
    let text = std::fs::read_to_string(&bounds).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "x,y,bound_lo,bound_hi,method");
    let mut rows = 0;
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 5);
        let lo: f64 = fields[2].parse().unwrap();
        let hi: f64 = fields[3].parse().unwrap();
        assert!(lo <= hi);
        assert_eq!(fields[4], "conditioned");
        rows += 1;
    }
    assert_eq!(rows, 200);
}

#[test]
fn reports_are_deterministic_given_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for path in [&a, &b] {
        let out = run(&[
            "calibrate", "--epsilon", "0.1", "--delta", "0.05", "--seed", "3",
            "--sigma", "none", "--out", path.to_str().unwrap(),
        ]);
        assert_exit(&out, 0);
    }
    assert_eq!(
        std::fs::read_to_string(&a).unwrap(),
        std::fs::read_to_string(&b).unwrap()
    );

    let ca = dir.path().join("cov_a.json");
    let cb = dir.path().join("cov_b.json");
    for path in [&ca, &cb] {
        let out = run(&[
            "coverage", "--epsilon", "0.2", "--delta", "0.3", "--reps", "10",
            "--validation-size", "1000", "--seed", "11", "--out", path.to_str().unwrap(),
        ]);
        assert_exit(&out, 0);
    }
    assert_eq!(
        std::fs::read_to_string(&ca).unwrap(),
        std::fs::read_to_string(&cb).unwrap()
    );
}

#[test]
fn single_member_family_matches_conditioned_kernel_calibration() {
    let dir = tempfile::tempdir().unwrap();
    let fam = dir.path().join("fam.json");
    let cal = dir.path().join("cal.json");
    let common = [
        "--epsilon", "0.2", "--delta", "0.05",
        "--train-seed", "2", "--train-size", "300",
        "--seed", "2", "--truncation-m", "120",
    ];
    let out = run(
        &[
            &["family", "--lambdas", "1"][..],
            &common,
            &["--out", fam.to_str().unwrap()],
        ]
        .concat(),
    );
    assert_exit(&out, 0);
    let out = run(
        &[
            &["calibrate", "--predictor", "kernel", "--lambda", "1", "--sigma", "parzen"][..],
            &common,
            &["--out", cal.to_str().unwrap()],
        ]
        .concat(),
    );
    assert_exit(&out, 0);

    let fam_json = json_file(&fam);
    let cal_json = json_file(&cal);
    assert_eq!(fam_json["selected_index"], 0);
    assert_eq!(
        fam_json["gamma_bars"][0].as_f64().unwrap(),
        cal_json["gamma_bar"].as_f64().unwrap(),
        "single-member family must equal the conditioned calibration"
    );
}

#[test]
fn usage_errors_exit_2() {
    // Out-of-range epsilon.
    let out = run(&["sample-size", "--epsilon", "2", "--delta", "0.5"]);
    assert_exit(&out, 2);
    // Duplicate lambdas.
    let out = run(&[
        "family", "--epsilon", "0.2", "--delta", "0.05", "--lambdas", "1,1",
        "--train-seed", "1", "--seed", "1", "--out", "/tmp/never.json",
    ]);
    assert_exit(&out, 2);
    // Constant below the proved threshold.
    let out = run(&[
        "sample-size", "--epsilon", "0.05", "--delta", "1e-6", "--constant", "7.0",
    ]);
    assert_exit(&out, 2);
    // Unknown sigma spec.
    let out = run(&[
        "calibrate", "--epsilon", "0.1", "--delta", "0.1", "--seed", "1",
        "--sigma", "bogus", "--out", "/tmp/never.json",
    ]);
    assert_exit(&out, 2);
}

#[test]
fn malformed_csv_errors_carry_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");

    // Missing y column.
    std::fs::write(&bad, "x1,z\n1.0,2.0\n").unwrap();
    let out = run(&[
        "calibrate", "--epsilon", "0.2", "--delta", "0.1",
        "--data", bad.to_str().unwrap(), "--out", "/tmp/never.json",
    ]);
    assert_exit(&out, 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("y column"));

    // Non-numeric field on a specific line.
    std::fs::write(&bad, "x1,y\n1.0,2.0\n1.5,oops\n").unwrap();
    let out = run(&[
        "calibrate", "--epsilon", "0.2", "--delta", "0.1",
        "--data", bad.to_str().unwrap(), "--out", "/tmp/never.json",
    ]);
    assert_exit(&out, 2);
    assert!(
        String::from_utf8_lossy(&out.stderr).contains(":3:"),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn contract_violations_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("short.csv");
    let out = run(&[
        "synth-data", "--count", "10", "--seed", "1", "--out", csv.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);

    // Dataset size does not match the spec N.
    let out = run(&[
        "calibrate", "--epsilon", "0.05", "--delta", "1e-6",
        "--data", csv.to_str().unwrap(), "--out", "/tmp/never.json",
    ]);
    assert_exit(&out, 3);

    // Tampered calibration report: hash check refuses.
    let report = dir.path().join("report.json");
    let out = run(&[
        "calibrate", "--epsilon", "0.2", "--delta", "0.05", "--seed", "9",
        "--sigma", "none", "--out", report.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let mut edited = json_file(&report);
    edited["config"]["calibration_data"]["seed"] = serde_json::json!(1234);
    std::fs::write(&report, serde_json::to_string_pretty(&edited).unwrap()).unwrap();
    let out = run(&[
        "validate", "--calibration", report.to_str().unwrap(),
        "--out", dir.path().join("v.json").to_str().unwrap(),
    ]);
    assert_exit(&out, 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("hash mismatch"));

    // Validating on the exact calibration draw refuses.
    let report2 = dir.path().join("report2.json");
    let cal_csv = dir.path().join("cal.csv");
    let size_json = dir.path().join("size.json");
    let out = run(&[
        "sample-size", "--epsilon", "0.2", "--delta", "0.05",
        "--out", size_json.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let n = json_file(&size_json)["n_samples"].as_u64().unwrap().to_string();
    let out = run(&[
        "synth-data", "--count", &n, "--seed", "4", "--purpose", "calibration",
        "--out", cal_csv.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let out = run(&[
        "calibrate", "--epsilon", "0.2", "--delta", "0.05",
        "--data", cal_csv.to_str().unwrap(), "--out", report2.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let out = run(&[
        "validate", "--calibration", report2.to_str().unwrap(),
        "--data", cal_csv.to_str().unwrap(),
        "--out", dir.path().join("v2.json").to_str().unwrap(),
    ]);
    assert_exit(&out, 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("disjoint"));
}

#[test]
fn coverage_single_rep_and_degenerate_fraction() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("cov.json");
    let out = run(&[
        "coverage", "--epsilon", "0.3", "--delta", "0.4", "--reps", "1",
        "--validation-size", "1000", "--out", out_path.to_str().unwrap(),
    ]);
    // With one repetition the fraction is 0 or 1; exit code reflects it.
    let json = json_file(&out_path);
    let fraction = json["failure_fraction"].as_f64().unwrap();
    assert!(fraction == 0.0 || fraction == 1.0);
    let runs = json["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 1);
    if fraction == 0.0 {
        assert_exit(&out, 0);
    } else {
        assert_exit(&out, 1);
    }
}

#[test]
fn experiment_config_file_feeds_kernel_settings() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("experiment.json");
    std::fs::write(
        &cfg,
        r#"{
  "kernel": {"amplitude": 50.0, "lengthscale_sq": 0.2},
  "weight": {"lambda": 2.0},
  "truncation": {"m": 100},
  "residual_mode": "local"
}"#,
    )
    .unwrap();
    let report = dir.path().join("report.json");
    let out = run(&[
        "calibrate", "--epsilon", "0.2", "--delta", "0.05", "--seed", "6",
        "--predictor", "kernel", "--train-seed", "7", "--train-size", "250",
        "--config", cfg.to_str().unwrap(), "--sigma", "parzen",
        "--out", report.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let rep = json_file(&report);
    assert_eq!(rep["config"]["predictor"]["lambda"], 2.0);
    assert_eq!(rep["config"]["predictor"]["settings"]["truncation_m"], 100);
}
