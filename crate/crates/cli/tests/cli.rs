use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn problem(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../problems")
        .join(name)
}

fn cgrelax(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cgrelax"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

/// Last stderr line is the machine-readable error object.
fn error_json(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let line = text
        .lines()
        .rev()
        .find(|l| l.starts_with('{'))
        .expect("error JSON on stderr");
    serde_json::from_str(line).unwrap()
}

fn write_spec(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, v.to_string()).unwrap();
    p
}

fn linear_spec() -> Value {
    serde_json::from_str(&std::fs::read_to_string(problem("svk_linear_bc.json")).unwrap()).unwrap()
}

#[test]
fn envelope_at_linear_boundary_gradient() {
    let o = cgrelax(&[
        "envelope",
        problem("svk_energy.json").to_str().unwrap(),
        "--F",
        "1.15,0.65;0.65,1.15",
    ]);
    assert_eq!(code(&o), 0);
    let v = stdout_json(&o)["Wquasi"].as_f64().unwrap();
    assert!((v - 5.017560).abs() <= 1e-4, "{v}");
}

#[test]
fn envelope_vanishes_at_identity_both_methods() {
    for method in ["spectral", "projection"] {
        let o = cgrelax(&[
            "envelope",
            problem("svk_energy.json").to_str().unwrap(),
            "--F",
            "1,0;0,1",
            "--method",
            method,
        ]);
        assert_eq!(code(&o), 0);
        assert!(stdout_json(&o)["Wquasi"].as_f64().unwrap().abs() <= 1e-7);
    }
}

#[test]
fn envelope_grid_is_zero_inside_unit_square() {
    let dir = tempfile::tempdir().unwrap();
    let o = cgrelax(&[
        "envelope",
        problem("svk_energy.json").to_str().unwrap(),
        "--grid",
        "s1:0:2:9,s2:0:2:9",
        "--out",
        dir.path().to_str().unwrap(),
        "--svg",
    ]);
    assert_eq!(code(&o), 0);
    let csv = std::fs::read_to_string(dir.path().join("envelope_surface.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("s1,s2,W,Wquasi"));
    let mut rows = 0;
    for line in lines {
        let f: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        if f[0].max(f[1]) <= 1.0 {
            assert!(f[3].abs() <= 1e-7, "{line}");
        } else {
            assert!(f[3] > 0.0, "{line}");
        }
        assert!(f[3] <= f[2] + 1e-8, "{line}");
        rows += 1;
    }
    assert_eq!(rows, 81);
    assert!(dir.path().join("envelope_surface.svg").exists());
}

#[test]
fn spectral_refuses_anisotropic_energy() {
    let o = cgrelax(&[
        "envelope",
        problem("anisotropic.json").to_str().unwrap(),
        "--F",
        "1,0;0,1",
        "--method",
        "spectral",
    ]);
    assert_eq!(code(&o), 2);
    let msg = error_json(&o)["error"]["message"]
        .as_str()
        .unwrap()
        .to_string();
    assert!(msg.contains("projection"), "{msg}");
}

#[test]
fn run_linear_boundary_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = cgrelax(&[
        "run",
        problem("svk_linear_bc.json").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--svg",
        "--grid",
        "20",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    let rec = &report["orders"][0];
    assert_eq!(rec["r"], 2);
    assert_eq!(rec["status"], "optimal");
    assert!((rec["j_mom"].as_f64().unwrap() - 5.017560).abs() <= 1e-4);
    assert!(rec["certificate"]["passed"].as_bool().unwrap());
    // the affine boundary is recovered up to the accuracy of the solved moments
    assert!(rec["boundary_trace_error"].as_f64().unwrap() <= 1e-3);
    assert!((rec["barycentric_value"].as_f64().unwrap() - 5.017560).abs() <= 1e-3);
    assert!(report["timestamp"].as_str().unwrap().contains('T'));
    assert!(dir.path().join("wireframe.csv").exists());
    assert!(dir.path().join("wireframe.svg").exists());
}

#[test]
fn run_reports_are_reproducible() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut reports = Vec::new();
    for d in &dirs {
        let o = cgrelax(&[
            "run",
            problem("svk_linear_bc.json").to_str().unwrap(),
            "--out",
            d.path().to_str().unwrap(),
            "--grid",
            "10",
        ]);
        assert_eq!(code(&o), 0);
        let mut v: Value =
            serde_json::from_str(&std::fs::read_to_string(d.path().join("report.json")).unwrap())
                .unwrap();
        v["timestamp"] = Value::Null;
        for rec in v["orders"].as_array_mut().unwrap() {
            rec["wall_time_s"] = Value::Null;
        }
        reports.push(v);
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn order_below_minimum_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = cgrelax(&[
        "run",
        problem("svk_linear_bc.json").to_str().unwrap(),
        "--order",
        "1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
    assert_eq!(error_json(&o)["error"]["exit_code"], 2);
}

#[test]
fn malformed_spec_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = linear_spec();
    v["energy"] = serde_json::json!({"kind": "svk", "lam": 0.0, "mu": -4.0});
    let p = write_spec(dir.path(), "bad.json", &v);
    let o = cgrelax(&[
        "run",
        p.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
    let p = dir.path().join("garbage.json");
    std::fs::write(&p, "{ not json").unwrap();
    let o = cgrelax(&["verify", p.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn iteration_cap_is_a_solver_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = cgrelax(&[
        "run",
        problem("svk_linear_bc.json").to_str().unwrap(),
        "--max-iters",
        "2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 3);
    assert_eq!(error_json(&o)["error"]["kind"], "solver");
}

#[test]
fn verify_shipped_spec_passes() {
    let o = cgrelax(&["verify", problem("svk_linear_bc.json").to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    assert!(v["passed"].as_bool().unwrap());
    assert_eq!(v["checks"].as_array().unwrap().len(), 5);
}

#[test]
fn verify_flags_indefinite_stiffness() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = linear_spec();
    v["energy"] = serde_json::json!({"kind": "anisotropic", "D": [1.0, 3.0, 0.0, 3.0, 1.0, 0.0, 0.0, 0.0, 1.0]});
    let p = write_spec(dir.path(), "indefinite.json", &v);
    let o = cgrelax(&["verify", p.to_str().unwrap()]);
    assert_eq!(code(&o), 4);
    let report = stdout_json(&o);
    let sos = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == "sos-convexity")
        .unwrap();
    assert_eq!(sos["passed"], false);
}

#[test]
fn verify_small_radius_is_a_configuration_error() {
    let o = cgrelax(&[
        "verify",
        problem("svk_linear_bc.json").to_str().unwrap(),
        "--R",
        "0.5",
    ]);
    assert_eq!(code(&o), 2);
    assert_eq!(error_json(&o)["error"]["kind"], "configuration");
}

#[test]
fn dumped_sdp_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let spec = problem("svk_linear_bc.json");
    let o = cgrelax(&[
        "run",
        spec.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--grid",
        "4",
    ]);
    assert_eq!(code(&o), 0);
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    let rec = &report["orders"][0];
    let radius = rec["R"].as_f64().unwrap().to_string();

    let sdp = dir.path().join("order_2.sdp");
    let o = cgrelax(&[
        "dump-sdp",
        spec.to_str().unwrap(),
        "--order",
        "2",
        "--R",
        &radius,
        "--out",
        sdp.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let o = cgrelax(&["dump-sdp", "--load-sdp", sdp.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    assert_eq!(v["status"], "optimal");
    assert!(v["certificate"]["passed"].as_bool().unwrap());
    let (a, b) = (
        v["objective"].as_f64().unwrap(),
        rec["j_mom"].as_f64().unwrap(),
    );
    assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()), "{a} vs {b}");
}
