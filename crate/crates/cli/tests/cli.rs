use std::path::Path;
use std::process::{Command, Output};

use ftsim_cli::config::RunConfig;

fn ftsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ftsim")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn equilibrium_prints_pre_fault_point() {
    let out = ftsim(&["equilibrium", "--preset", "first-benchmark"]);
    assert!(out.status.success());
    let v = json(&out);
    let psi3 = v["alpha_beta"]["psi"][2].as_f64().unwrap();
    assert_eq!(format!("{psi3:.4}"), "3.0705");
    assert_eq!(v["alpha_beta"]["theta_dot"][4].as_f64().unwrap(), 120.0 * std::f64::consts::PI);
}

#[test]
fn equilibrium_of_cleared_network() {
    let dir = tempfile::tempdir().unwrap();
    let out = ftsim(&["equilibrium", "--stage", "3", "--out-dir", dir.path().to_str().unwrap(), "--dump-reduction"]);
    assert!(out.status.success());
    let angle = json(&out)["power_angle_deg"].as_f64().unwrap();
    assert!((angle - 47.421).abs() <= 0.02, "{angle}");
    assert!(dir.path().join("equilibrium_stage3.csv").exists());
    assert!(dir.path().join("reduction/stage2_Ntilde_S0.csv").exists());
}

#[test]
fn malformed_config_exits_with_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{ \"scenario\": { \"h\": -1 } }").unwrap();
    let out = ftsim(&["equilibrium", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
    std::fs::write(&path, "{ not json").unwrap();
    assert_eq!(ftsim(&["simulate", "--config", path.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(ftsim(&["simulate", "--method", "rk4"]).status.code(), Some(1));
}

#[test]
fn simulate_writes_decimated_rows_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = ftsim(&["simulate", "--t-break", "0.05", "--horizon", "0.35", "--h", "1e-4", "--decimation", "100", "--out-dir", d]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = csv_rows(&dir.path().join("trajectory.csv"));
    assert_eq!(&header[..5], ["t", "stage", "delta_omega", "torque_em", "power_angle_deg"]);
    let t: Vec<f64> = rows.iter().filter(|r| r[1] == "3").map(|r| r[0].parse().unwrap()).collect();
    for w in t.windows(2) {
        assert!((w[1] - w[0] - 0.01).abs() < 1e-9);
    }
    // 17 significant digits
    assert!(rows[1][0].contains("e") && rows[1][2].split('e').next().unwrap().trim_start_matches('-').len() == 18);

    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert!(summary["max_dirac_residual"].as_f64().unwrap() >= 0.0);
    assert_eq!(summary["dirac"]["violations"].as_u64(), Some(0));
    assert!(summary["newton"]["mean_iterations"].as_f64().unwrap() > 0.0);
    let cfg = RunConfig::from_json(&summary["config"].to_string()).unwrap();
    assert_eq!(cfg.output.decimation, 100);
}

#[test]
fn methods_share_the_csv_schema() {
    let mut headers = Vec::new();
    for m in ["pc-beta1", "sp-euler"] {
        let dir = tempfile::tempdir().unwrap();
        let out = ftsim(&["simulate", "--method", m, "--t-break", "0.02", "--horizon", "0.2", "--out-dir", dir.path().to_str().unwrap()]);
        assert!(out.status.success());
        headers.push(csv_rows(&dir.path().join("trajectory.csv")).0);
    }
    assert_eq!(headers[0], headers[1]);
}

#[test]
fn compare_pairs_two_methods() {
    let dir = tempfile::tempdir().unwrap();
    let out = ftsim(&["compare", "--method", "sp-midpoint", "--against", "pc-beta0.5", "--t-break", "0.02", "--horizon", "0.2", "--out-dir", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    let (header, rows) = csv_rows(&dir.path().join("compare.csv"));
    assert_eq!(header.last().unwrap(), "error_norm");
    assert!(!rows.is_empty());
    let worst = rows.iter().map(|r| r.last().unwrap().parse::<f64>().unwrap()).fold(0.0, f64::max);
    assert!(worst < 1e-2, "{worst}");
    assert!(dir.path().join("trajectory_sp-midpoint.csv").exists());
    assert!(dir.path().join("trajectory_pc-beta0.5.csv").exists());
}

#[test]
fn cct_rejects_non_bracketing_interval() {
    let dir = tempfile::tempdir().unwrap();
    let out = ftsim(&["cct", "--lo", "0.3", "--hi", "0.5", "--tol", "0.1", "--horizon", "10.6", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn cct_bisects_and_logs_every_probe() {
    let dir = tempfile::tempdir().unwrap();
    let out = ftsim(&["cct", "--lo", "0.7", "--hi", "0.8", "--tol", "0.05", "--out-dir", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    let probes = v["probes"].as_array().unwrap();
    let bisections = probes.iter().filter(|p| !p["endpoint"].as_bool().unwrap()).count();
    assert!(bisections <= 1);
    assert!(v["width"].as_f64().unwrap() <= 0.05 + 1e-12);
    let (_, rows) = csv_rows(&dir.path().join("probes.csv"));
    assert_eq!(rows.len(), probes.len());
}
