use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_caseonly-ve"))
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).env_remove("CASEONLY_VE_WORKERS").output().unwrap()
}

#[test]
fn malformed_input_exits_with_validation_status() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.csv"), "w_1,a,t,delta,j\n0.1,1,1.0,1,1\n0.2,2,1.0,1,0\n").unwrap();
    let out = run(&["fit", "--input", "bad.csv", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("row 2") && stderr.contains('a'), "{stderr}");

    std::fs::write(dir.path().join("neg.csv"), "a,t,delta,j\n1,-1,1,1\n").unwrap();
    let out = run(&["fit", "--input", "neg.csv", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    let out = run(&["fit", "--input", "missing.csv", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("mc.json"), r#"{"replicatez": 3}"#).unwrap();
    let out = run(&["mc", "--config", "mc.json", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_then_fit_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["simulate", "--n", "400", "--seed", "3", "--out", "sim.csv"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let again = run(&["simulate", "--n", "400", "--seed", "3", "--out", "sim2.csv"], dir.path());
    assert!(again.status.success());
    let first = std::fs::read(dir.path().join("sim.csv")).unwrap();
    assert_eq!(first, std::fs::read(dir.path().join("sim2.csv")).unwrap());
    assert!(String::from_utf8_lossy(&first).starts_with("w_1,w_2,a,t,wt_1,delta,j\n"));

    for estimator in ["tmle-basic", "tmle-adjusted"] {
        let res = dir.path().join(estimator);
        let out = run(
            &["fit", "--input", "sim.csv", "--out", res.to_str().unwrap(), "--estimator", estimator],
            dir.path(),
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let report: serde_json::Value =
            serde_json::from_slice(&std::fs::read(res.join("report.json")).unwrap()).unwrap();
        assert_eq!(report["converged"], true);
        assert_eq!(report["beta"].as_array().unwrap().len(), 2);
        let (lo, hi, b) = (&report["ci_low"], &report["ci_high"], &report["beta"]);
        for k in 0..2 {
            assert!(lo[k].as_f64().unwrap() < b[k].as_f64().unwrap());
            assert!(b[k].as_f64().unwrap() < hi[k].as_f64().unwrap());
        }
        assert!(res.join("diagnostics.json").exists());
        let curve = std::fs::read_to_string(res.join("curve.csv")).unwrap();
        assert!(curve.starts_with("w_1,w_2,t,log_or,se,ci_low,ci_high,rel_ve\n"));
        assert_eq!(curve.lines().count(), 12);
    }
}

#[test]
fn unsolved_score_exits_with_status_three() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(&["simulate", "--n", "300", "--seed", "5", "--out", "sim.csv"], dir.path()).status.success());
    std::fs::write(
        dir.path().join("fit.json"),
        r#"{"estimator": "tmle-basic", "tmle": {"max_iter": 0, "penalty": {"grid": {"fixed": [10.0]}}}}"#,
    )
    .unwrap();
    let out = run(&["fit", "--config", "fit.json", "--input", "sim.csv", "--out", "res"], dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("res/report.json")).unwrap()).unwrap();
    assert_eq!(report["converged"], false);
}

#[test]
fn monte_carlo_outputs_have_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("mc.json"),
        r#"{"n": [120], "replicates": 3, "estimators": ["glm", "glm-naive"], "master_seed": 4}"#,
    )
    .unwrap();
    let out = run(&["mc", "--config", "mc.json", "--out", "res", "--workers", "2"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = std::fs::read_to_string(dir.path().join("res/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next().unwrap(), "estimator,n,coef,bias,se,rmse,coverage,excluded");
    assert_eq!(metrics.lines().count(), 1 + 2 * 2);
    let reps = std::fs::read_to_string(dir.path().join("res/replicates.csv")).unwrap();
    assert_eq!(reps.lines().count(), 1 + 2 * 3 * 2);
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("res/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["replicate_seeds"].as_array().unwrap().len(), 3);
    assert!(summary["wall_time_secs"].as_f64().unwrap() >= 0.0);
}
