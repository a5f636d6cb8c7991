//! End-to-end tests of the command-line binary: exit codes, error
//! messages, artifact files and byte-level determinism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_spline-infer")
}

fn work_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir()
        .join("spline_infer_cli_tests")
        .join(format!("{tag}_{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_cli(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary should launch")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Deterministic pseudo-data: a noisy line on [0, 1].
fn write_linear_csv(path: &Path, n: usize) {
    let mut body = String::from("z,y\n");
    let mut state = 0x9e3779b97f4a7c15u64;
    let mut unit = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 11) as f64) / (1u64 << 53) as f64
    };
    for _ in 0..n {
        let z = unit();
        let eps = unit() + unit() + unit() + unit() - 2.0; // ~N(0, 1/3)-ish
        body.push_str(&format!("{z:.6},{:.6}\n", -0.5 + z + 0.05 * eps));
    }
    fs::write(path, body).unwrap();
}

#[test]
fn fit_writes_artifacts_and_reports_success() {
    let dir = work_dir("fit_ok");
    let input = dir.join("data.csv");
    write_linear_csv(&input, 200);
    let out = run_cli(&[
        "fit",
        "--input",
        input.to_str().unwrap(),
        "--family",
        "gaussian",
        "--basis",
        "periodic",
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    assert!(dir.join("out/fit.json").exists());
    let curve = fs::read_to_string(dir.join("out/curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 202); // header + 201 grid points
    assert!(curve.starts_with("z,ghat"));
}

#[test]
fn malformed_covariate_names_the_row() {
    let dir = work_dir("bad_row");
    let input = dir.join("data.csv");
    let mut body = String::from("z,y\n");
    for i in 0..6 {
        body.push_str(&format!("0.{}1,0.0\n", i + 1));
    }
    body.push_str("1.5,0.0\n"); // data row 7
    for _ in 0..5 {
        body.push_str("0.5,0.0\n");
    }
    fs::write(&input, body).unwrap();
    let out = run_cli(&["fit", "--input", input.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_of(&out);
    assert!(err.contains("row 7"), "stderr: {err}");
}

#[test]
fn conflicting_lambda_flags_exit_2() {
    let dir = work_dir("conflict");
    let input = dir.join("data.csv");
    write_linear_csv(&input, 50);
    let out = run_cli(&[
        "fit",
        "--input",
        input.to_str().unwrap(),
        "--lambda",
        "1e-4",
        "--gcv",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn band_on_logistic_is_unsupported() {
    let dir = work_dir("band_logit");
    let input = dir.join("data.csv");
    let mut body = String::from("z,y\n");
    for i in 0..120 {
        let z = (i as f64 + 0.5) / 120.0;
        body.push_str(&format!("{z:.5},{}\n", i % 2));
    }
    fs::write(&input, body).unwrap();
    let out = run_cli(&[
        "band",
        "--input",
        input.to_str().unwrap(),
        "--family",
        "logistic",
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr_of(&out).contains("unsupported-combination"),
        "stderr: {}",
        stderr_of(&out)
    );
}

#[test]
fn linearity_test_on_linear_data_accepts_and_reports_constants() {
    let dir = work_dir("test_linear");
    let input = dir.join("data.csv");
    write_linear_csv(&input, 200);
    let out = run_cli(&[
        "test-linear",
        "--input",
        input.to_str().unwrap(),
        "--q",
        "1",
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let body = fs::read_to_string(dir.join("out/test.json")).unwrap();
    let doc: serde_json::Value = serde_json::from_str(&body).unwrap();
    assert!(doc.get("r_K").is_some(), "r_K missing: {body}");
    assert!(doc.get("u_n").is_some(), "u_n missing: {body}");
    assert!(doc["p_value"].as_f64().unwrap() > 0.05, "{body}");
    assert_eq!(doc["reject"], serde_json::Value::Bool(false));
}

#[test]
fn local_test_at_the_fitted_value_is_null() {
    let dir = work_dir("test_local");
    let input = dir.join("data.csv");
    write_linear_csv(&input, 150);
    // Fit first to learn ghat(0.5) from the written curve.
    let out = run_cli(&[
        "fit",
        "--input",
        input.to_str().unwrap(),
        "--lambda",
        "1e-4",
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let curve = fs::read_to_string(dir.join("out/curve.csv")).unwrap();
    let mid = curve
        .lines()
        .find(|l| l.starts_with("0.500000,"))
        .expect("grid midpoint present");
    let w0: f64 = mid.split(',').nth(1).unwrap().parse().unwrap();

    let out = run_cli(&[
        "test-local",
        "--input",
        input.to_str().unwrap(),
        "--lambda",
        "1e-4",
        "--z0",
        "0.5",
        "--w0",
        &format!("{w0}"),
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("out/test.json")).unwrap()).unwrap();
    // w0 came from the 6-digit CSV, so the statistic is near but not
    // exactly zero.
    assert!(doc["statistic"].as_f64().unwrap() < 1e-3, "{doc}");
    assert!(doc["p_value"].as_f64().unwrap() > 0.9);
}

#[test]
fn simulate_is_deterministic_and_writes_reports() {
    let dir = work_dir("simulate");
    let scenario = dir.join("scenario.json");
    fs::write(
        &scenario,
        r#"{
            "generator": {"kind": "linearity-c", "omega": 1.0, "logistic": false, "sigma": 0.05},
            "n": 40, "c": 2.0, "reps": 10, "seed": 31,
            "inference": {"task": "power", "alpha": 0.05, "q": 1}
        }"#,
    )
    .unwrap();
    let out1 = run_cli(&[
        "simulate",
        "--scenario",
        scenario.to_str().unwrap(),
        "--out",
        dir.join("a").to_str().unwrap(),
    ]);
    assert!(out1.status.success(), "{}", stderr_of(&out1));
    let out2 = run_cli(&[
        "simulate",
        "--scenario",
        scenario.to_str().unwrap(),
        "--out",
        dir.join("b").to_str().unwrap(),
    ]);
    assert!(out2.status.success());
    let a_json = fs::read(dir.join("a/report.json")).unwrap();
    let b_json = fs::read(dir.join("b/report.json")).unwrap();
    assert_eq!(a_json, b_json, "same seed must give identical bytes");
    let a_csv = fs::read(dir.join("a/report.csv")).unwrap();
    let b_csv = fs::read(dir.join("b/report.csv")).unwrap();
    assert_eq!(a_csv, b_csv);
    let csv = String::from_utf8(a_csv).unwrap();
    assert!(csv.starts_with("n,c,reps,rejections,rate,mc_se"), "{csv}");

    // Overriding the seed changes the outcome stream.
    let out3 = run_cli(&[
        "simulate",
        "--scenario",
        scenario.to_str().unwrap(),
        "--seed",
        "32",
        "--out",
        dir.join("c").to_str().unwrap(),
    ]);
    assert!(out3.status.success());
    let c_json = fs::read(dir.join("c/report.json")).unwrap();
    assert_ne!(a_json, c_json);
}

#[test]
fn simulate_rejects_invalid_scenarios() {
    let dir = work_dir("simulate_bad");
    let scenario = dir.join("scenario.json");
    fs::write(
        &scenario,
        r#"{
            "generator": {"kind": "caseI-beta-mix"},
            "n": 100, "reps": 0, "seed": 1,
            "inference": {"task": "power"}
        }"#,
    )
    .unwrap();
    let out = run_cli(&[
        "simulate",
        "--scenario",
        scenario.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn shipped_scenario_files_parse_and_the_table_runs_end_to_end() {
    let scenario_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    let mut names = Vec::new();
    for entry in fs::read_dir(&scenario_dir).unwrap() {
        let path = entry.unwrap().path();
        let text = fs::read_to_string(&path).unwrap();
        // Every shipped file is a scenario or an array of them.
        if text.trim_start().starts_with('[') {
            let list: Vec<spline_infer::simharness::Scenario> =
                serde_json::from_str(&text).unwrap();
            assert!(!list.is_empty());
            for sc in &list {
                sc.validate().unwrap();
            }
        } else {
            spline_infer::simharness::Scenario::from_json(&text).unwrap();
        }
        names.push(path.file_name().unwrap().to_owned());
    }
    assert!(names.len() >= 5, "expected the shipped scenario set, got {names:?}");

    // Run the four-cell linearity table end to end at reduced replications.
    let dir = work_dir("table1");
    let text = fs::read_to_string(scenario_dir.join("table1_linearity.json")).unwrap();
    let mut list: Vec<spline_infer::simharness::Scenario> = serde_json::from_str(&text).unwrap();
    assert_eq!(list.len(), 4);
    for sc in &mut list {
        sc.reps = 30;
    }
    let reduced = dir.join("table1_small.json");
    fs::write(&reduced, serde_json::to_string(&list).unwrap()).unwrap();
    let out = run_cli(&[
        "simulate",
        "--scenario",
        reduced.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let csv = fs::read_to_string(dir.join("out/report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5, "header + 4 power cells:\n{csv}");
    assert!(csv.starts_with("n,c,reps,rejections,rate,mc_se"));
}

#[test]
fn help_and_version_succeed() {
    assert!(run_cli(&["--help"]).status.success());
    assert!(run_cli(&["--version"]).status.success());
    assert_eq!(run_cli(&["no-such-command"]).status.code(), Some(2));
}
