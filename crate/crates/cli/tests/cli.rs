use std::path::Path;
use std::process::{Command, Output};

fn dsm(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsm"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("run dsm")
}

#[test]
fn solve_converges_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dsm(
        dir.path(),
        &["solve", "monotone-holder", "--kappa", "0.5", "--n", "16"],
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(trace.starts_with("t,r,residual,envelope,dist_to_w,dist_to_y\n"));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["results"]["status"], "converged");
    let residual = manifest["results"]["metrics"]["final_residual"]
        .as_f64()
        .unwrap();
    assert!(residual <= 1e-8 * 2.0);
}

#[test]
fn huge_g0_is_a_gate_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = dsm(dir.path(), &["solve", "monotone-holder", "--g0", "1e6"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("gate initial-distance failed"), "{stderr}");
    assert!(stderr.contains("lower g0"));
    assert!(!dir.path().join("trace.csv").exists());
}

#[test]
fn forced_run_ignores_gates() {
    let dir = tempfile::tempdir().unwrap();
    let out = dsm(
        dir.path(),
        &[
            "solve",
            "wellposed-linear",
            "--n",
            "2",
            "--g0",
            "0.5",
            "--force",
        ],
    );
    assert_ne!(out.status.code(), Some(2));
    assert!(dir.path().join("trace.csv").exists());
}

#[test]
fn usage_errors_exit_64() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        dsm(dir.path(), &["solve", "--bogus"]).status.code(),
        Some(64)
    );
    assert_eq!(
        dsm(dir.path(), &["solve", "no-such-kind"]).status.code(),
        Some(64)
    );
    assert_eq!(dsm(dir.path(), &["verify", "nope"]).status.code(), Some(64));
    assert_eq!(
        dsm(dir.path(), &["bench", "--baselines", "magic"])
            .status
            .code(),
        Some(64)
    );
    assert_eq!(
        dsm(dir.path(), &["solve", "illposed-kernel", "--n", "100"])
            .status
            .code(),
        Some(64)
    );
}

#[test]
fn horizon_too_short_is_solver_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = dsm(
        dir.path(),
        &["solve", "wellposed-linear", "--n", "2", "--max-time", "1"],
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn verify_schedule_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = dsm(dir.path(), &["--format", "json", "verify", "schedule"]);
    assert_eq!(out.status.code(), Some(0));
    let checks: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("verify.json")).unwrap())
            .unwrap();
    assert!(checks
        .as_array()
        .unwrap()
        .iter()
        .all(|c| c["passed"] == true));
}

#[test]
fn bench_without_baselines_is_dsm_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = dsm(
        dir.path(),
        &["bench", "wellposed-linear", "--n", "3", "--baselines", ""],
    );
    assert_eq!(out.status.code(), Some(0));
    let table = std::fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert_eq!(table.lines().count(), 2);
    assert!(table.lines().nth(1).unwrap().starts_with("dsm,"));
}

#[test]
fn schedule_reports_gate_failure() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(dsm(dir.path(), &["schedule"]).status.code(), Some(0));
    let out = dsm(dir.path(), &["schedule", "--g0", "10"]);
    assert_eq!(out.status.code(), Some(2));
    let csv = std::fs::read_to_string(dir.path().join("schedule.csv")).unwrap();
    assert!(csv.starts_with("t,r,envelope\n"));
}

#[test]
fn complex_ray_converges() {
    let dir = tempfile::tempdir().unwrap();
    let out = dsm(
        dir.path(),
        &["solve", "wellposed-linear", "--n", "4", "--theta", "0.5"],
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
}
