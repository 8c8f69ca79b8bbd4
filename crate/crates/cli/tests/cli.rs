use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL_SCAN: &str = r#"
[species]
preset = "rb87"

[schedule]
oscillations = 100
depth_er = 20
accel_ms2 = 393.5
tau_load_ms = 5
tau_ramp_ms = 1

[scan]
depths_er = [10, 20, 30]
accels_ms2 = { start = 100, stop = 500, step = 50 }
ramps_ms = [0.1, 1]
models = ["lz"]
"#;

fn blochlmt(scenario: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blochlmt"))
        .arg("--scenario")
        .arg(scenario)
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("spawn blochlmt")
}

fn shipped(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn golden_value(summary: &Path, key: &str) -> f64 {
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(summary).unwrap()).unwrap();
    json["golden"][key].as_f64().unwrap_or_else(|| panic!("{key} missing from {}", summary.display()))
}

fn write_scenario(dir: &TempDir, body: &str) -> PathBuf {
    let path = dir.path().join("scenario.toml");
    fs::write(&path, body).unwrap();
    path
}

#[test]
fn bands_writes_csv_and_summary() {
    let dir = TempDir::new().unwrap();
    let out = blochlmt(&shipped("optimum_v20.toml"), dir.path(), &["bands", "--bands", "3", "--kappa", "65"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let csv = fs::read_to_string(dir.path().join("bands.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("kappa,band0_er,band1_er,band2_er"));
    assert_eq!(lines.count(), 65);

    let summary = dir.path().join("bands_summary.json");
    assert!((golden_value(&summary, "band_average_0") + 5.795).abs() < 1e-3);
    assert!((golden_value(&summary, "edge_gap") - 7.648).abs() < 1e-3);
}

#[test]
fn unknown_scenario_key_is_rejected() {
    let dir = TempDir::new().unwrap();
    let scenario = write_scenario(&dir, &SMALL_SCAN.replace("depth_er = 20", "depth_er = 20\ndepth_uk = 3"));
    let out = blochlmt(&scenario, dir.path(), &["bands"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("depth_uk"));
}

#[test]
fn panda_case_reproduces_phase_window() {
    let dir = TempDir::new().unwrap();
    let out = blochlmt(&shipped("panda.toml"), dir.path(), &["case", "panda"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dphi = golden_value(&dir.path().join("case_panda_summary.json"), "delta_phi_rad");
    assert!((0.7..=1.1).contains(&dphi), "dphi = {dphi}");
}

#[test]
fn scan_is_worker_independent_and_matches_golden() {
    let dir = TempDir::new().unwrap();
    let scenario = write_scenario(&dir, SMALL_SCAN);
    let (one, three) = (dir.path().join("w1"), dir.path().join("w3"));
    let golden = dir.path().join("golden.json");

    let out = blochlmt(&scenario, &one, &["--workers", "1", "scan", "--bless", golden.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = blochlmt(&scenario, &three, &["--workers", "3", "scan", "--golden", golden.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let a = fs::read(one.join("scan.csv")).unwrap();
    let b = fs::read(three.join("scan.csv")).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("depth_er,accel_ms2,tau_ramp_s,oscillations,loss_ws,loss_lz,"));
    assert_eq!(text.lines().count(), 1 + 3 * 9 * 2);
}

#[test]
fn scan_golden_mismatch_fails() {
    let dir = TempDir::new().unwrap();
    let scenario = write_scenario(&dir, SMALL_SCAN);
    let golden = dir.path().join("golden.json");
    let out = blochlmt(&scenario, dir.path(), &["scan", "--bless", golden.to_str().unwrap()]);
    assert!(out.status.success());

    let mut file: serde_json::Value = serde_json::from_str(&fs::read_to_string(&golden).unwrap()).unwrap();
    let entry = &mut file["entries"]["row0.loss_lz"]["value"];
    *entry = serde_json::json!(entry.as_f64().unwrap() * 1.01);
    fs::write(&golden, file.to_string()).unwrap();

    let out = blochlmt(&scenario, dir.path(), &["scan", "--golden", golden.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("row0.loss_lz"));
}
