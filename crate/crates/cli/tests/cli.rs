use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn cyflow(args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_cyflow")).args(args).output().unwrap();
    Run {
        code: out.status.code().unwrap(),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path
}

fn run_cmd(cmd: &str, config: &Path, out: &Path) -> (Run, PathBuf) {
    let r = cyflow(&[cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let line: Value = serde_json::from_str(r.stdout.trim()).unwrap_or(Value::Null);
    let dir = line["run_dir"].as_str().map(PathBuf::from).unwrap_or_default();
    (r, dir)
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

const STATIONARY: &str = r#"{
    "background": {"n": 1, "resolution": [16, 16], "s_base": "-1"},
    "initial": {"kind": "zero"},
    "stepper": {"t_end": 0.05, "snapshot_every": 0.01}
}"#;

const OSCILLATING: &str = r#"{
    "background": {"n": 1, "resolution": [32, 32], "s_base": "-1 + 0.5*sin(2*pi*x1)*cos(2*pi*x2)"},
    "initial": {"kind": "mode", "amplitude": 0.3, "wavevector": [1, 0]},
    "stepper": {"scheme": "semi-implicit", "dt_init": 0.01, "t_end": 40, "snapshot_every": 0.1},
    "params": {"tol": 1e-8}
}"#;

#[test]
fn stationary_flow_keeps_the_series_constant() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), STATIONARY);
    let (r, dir) = run_cmd("flow", &cfg, tmp.path());
    assert_eq!(r.code, 0, "{}", r.stderr);
    let mut rdr = csv::Reader::from_path(dir.join("series.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let (mass, s_max, s_min) = (col("mass"), col("S_max"), col("S_min"));
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let get = |i: usize| rec[i].parse::<f64>().unwrap();
        assert!((get(mass) - 1.0).abs() < 1e-14);
        assert!((get(s_max) + 1.0).abs() < 1e-14);
        assert!((get(s_min) + 1.0).abs() < 1e-14);
        rows += 1;
    }
    assert!(rows >= 5);
    assert!(dir.join("final.cyf").exists());
    let s = summary(&dir);
    assert_eq!(s["exit_code"], 0);
    assert_eq!(s["lower_bound"]["holds"], true);
}

#[test]
fn steady_records_convergence_time() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), OSCILLATING);
    let (r, dir) = run_cmd("steady", &cfg, tmp.path());
    assert_eq!(r.code, 0, "{}", r.stderr);
    let s = summary(&dir);
    assert!(s["converged_at"].as_f64().unwrap() > 0.0);
    assert!(s["final_curvature_deviation"].as_f64().unwrap() <= 1e-8);
}

#[test]
fn steady_timeout_is_an_assertion_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &OSCILLATING.replace("\"t_end\": 40", "\"t_end\": 0.05"));
    let (r, dir) = run_cmd("steady", &cfg, tmp.path());
    assert_eq!(r.code, 4);
    assert_eq!(summary(&dir)["timed_out"], true);
}

#[test]
fn bump_that_does_not_fit_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let body = r#"{
        "background": {"n": 2, "resolution": [8, 8, 8, 8], "s_base": "1"},
        "params": {"radii": [0.4]}
    }"#;
    let cfg = write_config(tmp.path(), body);
    let (r, _) = run_cmd("unbounded", &cfg, tmp.path());
    assert_ne!(r.code, 0);
    let err: Value = serde_json::from_str(r.stderr.trim()).unwrap();
    assert_eq!(err["error"], "BumpDoesNotFit", "{err}");
}

#[test]
fn unbounded_sweep_writes_table() {
    let tmp = tempfile::tempdir().unwrap();
    let body = r#"{
        "background": {"n": 2, "resolution": [8, 8, 8, 8], "s_base": "1"},
        "params": {"radii": [0.125, 0.0625, 0.03125]}
    }"#;
    let cfg = write_config(tmp.path(), body);
    let (r, dir) = run_cmd("unbounded", &cfg, tmp.path());
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(summary(&dir)["energy_decreasing_as_r_shrinks"], true);
    let table = std::fs::read_to_string(dir.join("sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
}

#[test]
fn bad_configs_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.json");
    let (r, _) = run_cmd("flow", &missing, tmp.path());
    assert_eq!(r.code, 2);
    let err: Value = serde_json::from_str(r.stderr.trim()).unwrap();
    assert_eq!(err["exit_code"], 2);

    let cfg = write_config(tmp.path(), &STATIONARY.replace("\"-1\"", "\"-1 + x5\""));
    let (r, _) = run_cmd("flow", &cfg, tmp.path());
    assert_eq!(r.code, 2, "{}", r.stderr);

    let cfg = write_config(tmp.path(), &STATIONARY.replace("\"t_end\": 0.05", "\"t_end\": -1"));
    let (r, _) = run_cmd("flow", &cfg, tmp.path());
    assert_eq!(r.code, 2, "{}", r.stderr);
}

#[test]
fn repeated_runs_are_identical_and_echo_reruns() {
    let body = OSCILLATING.replace("\"t_end\": 40", "\"t_end\": 0.2");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = write_config(a.path(), &body);
    let (ra, da) = run_cmd("flow", &cfg, a.path());
    let (rb, db) = run_cmd("flow", &cfg, b.path());
    assert_eq!((ra.code, rb.code), (0, 0));
    assert_eq!(da.file_name(), db.file_name());
    for name in ["series.csv", "final.cyf"] {
        assert_eq!(std::fs::read(da.join(name)).unwrap(), std::fs::read(db.join(name)).unwrap(), "{name}");
    }

    // The echoed config reproduces the run directory name and outputs.
    let c = tempfile::tempdir().unwrap();
    let (rc, dc) = run_cmd("flow", &da.join("config.json"), c.path());
    assert_eq!(rc.code, 0, "{}", rc.stderr);
    assert_eq!(dc.file_name(), da.file_name());
    assert_eq!(std::fs::read(dc.join("series.csv")).unwrap(), std::fs::read(da.join("series.csv")).unwrap());
}

#[test]
fn stability_reports_saddle() {
    let tmp = tempfile::tempdir().unwrap();
    let body = r#"{
        "background": {"n": 1, "resolution": [16, 16], "s_base": "4*pi^2"},
        "stepper": {"t_end": 2, "snapshot_every": 0.01},
        "params": {"saddle": true}
    }"#;
    let cfg = write_config(tmp.path(), body);
    let (r, dir) = run_cmd("stability", &cfg, tmp.path());
    assert_eq!(r.code, 0, "{}", r.stderr);
    let s = summary(&dir);
    assert_eq!(s["hessian"]["classification"], "saddle", "{s}");
    assert!(s["saddle"]["reached_target"].as_f64().is_some());
    assert!(dir.join("eigenvector.cyf").exists());
}
