//! End-to-end runs of the `hingeplace` binary.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_hingeplace"));
    for (k, _) in std::env::vars() {
        if k.starts_with("HINGEPLACE_") {
            c.env_remove(k);
        }
    }
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn stdout_json(o: &Output) -> Value {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

fn stderr_error(o: &Output) -> Value {
    let v: Value = serde_json::from_slice(&o.stderr).expect("stderr is JSON");
    v["error"].clone()
}

/// Coarse layout so each test assembles its forward model quickly.
const COARSE: [&str; 4] = ["-s", "layout.target_spacing=0.004", "-s", "layout.annulus_spacing=0.006"];

fn coarse_forward(dir: &Path) -> Value {
    let mut args = vec!["forward"];
    args.extend(COARSE);
    stdout_json(&run(dir, &args))
}

fn currents(path: &Path) -> Vec<f64> {
    let v: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    v["currents"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

fn rel_l1(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
    100.0 * num / b.iter().map(|y| y.abs()).sum::<f64>()
}

#[test]
fn default_forward_is_3m_by_21() {
    let dir = tempfile::tempdir().unwrap();
    let s = stdout_json(&run(dir.path(), &["forward"]));
    assert_eq!(s["cols"], 21);
    let man: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("forward.json")).unwrap()).unwrap();
    let m = man["n_voxels"].as_u64().unwrap();
    assert_eq!(s["rows"].as_u64().unwrap(), 3 * m);
    let blob = std::fs::metadata(dir.path().join("forward.bin")).unwrap().len();
    assert_eq!(blob, 8 * (3 * m * 21 + 3 * m + m));
    assert!(dir.path().join("forward.region.json").exists());
}

#[test]
fn hingeplace_p2_zero_bands_matches_lcmv() {
    let dir = tempfile::tempdir().unwrap();
    coarse_forward(dir.path());
    stdout_json(&run(dir.path(), &["solve", "-o", "lcmv.json"]));
    let hp = run(
        dir.path(),
        &["solve", "-s", "method=hingeplace", "-s", "p=2", "-s", "tol=[0,0,0]", "-o", "hp.json"],
    );
    stdout_json(&hp);
    let d = rel_l1(&currents(&dir.path().join("hp.json")), &currents(&dir.path().join("lcmv.json")));
    assert!(d < 0.1, "relative difference {d}%");
}

#[test]
fn every_method_solves() {
    let dir = tempfile::tempdir().unwrap();
    coarse_forward(dir.path());
    for m in ["lcmv_e", "cdm", "directional_max", "hingeplace", "l1l1", "magmax_biconvex"] {
        let out = format!("{m}.json");
        let s = stdout_json(&run(dir.path(), &["solve", "-s", &format!("method={m}"), "-o", &out]));
        assert_eq!(s["status"], "optimal", "{m}");
        let c = currents(&dir.path().join(&out));
        assert_eq!(c.len(), 21);
        assert!(c.iter().sum::<f64>().abs() < 1e-9 * 4.0, "{m}");
    }
}

#[test]
fn zero_field_metrics_row() {
    let dir = tempfile::tempdir().unwrap();
    coarse_forward(dir.path());
    let ids: Vec<String> = (0..21).map(|i| format!("E{i:02}")).collect();
    let doc = serde_json::json!({ "units": "mA", "electrode_ids": ids, "currents": vec![0.0; 21] });
    std::fs::write(dir.path().join("zero.json"), doc.to_string()).unwrap();
    stdout_json(&run(dir.path(), &["metrics", "-s", "montage=zero.json"]));
    let text = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "v_th_m3,n_active,n_voxels,e_des,fraction,activation_threshold");
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0].parse::<f64>().unwrap(), 0.0);
    assert_eq!(row[1], "0");
    assert!(lines.next().is_none());
}

#[test]
fn infeasible_budget_has_distinct_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    coarse_forward(dir.path());
    let o = run(dir.path(), &["solve", "-s", "i_safe=0.001", "-s", "e_des=100", "-o", "never.json"]);
    assert_eq!(o.status.code(), Some(4));
    let e = stderr_error(&o);
    assert_eq!(e["kind"], "infeasible");
    assert_eq!(e["code"], 4);
    assert!(!dir.path().join("never.json").exists());
}

#[test]
fn config_and_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["solve", "-s", "no_such_key=1"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_error(&o)["kind"], "config");
    let o = run(dir.path(), &["solve", "-s", "forward=missing.json"]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(stderr_error(&o)["kind"], "io");
    let o = run(dir.path(), &["explode"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn tampered_blob_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    coarse_forward(dir.path());
    let p = dir.path().join("forward.bin");
    let mut b = std::fs::read(&p).unwrap();
    b[17] ^= 0x40;
    std::fs::write(&p, b).unwrap();
    let o = run(dir.path(), &["solve"]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(stderr_error(&o)["kind"], "format");
}

#[test]
fn flags_override_env_override_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = serde_json::json!({
        "layout": { "target_spacing": 0.004, "annulus_spacing": 0.006 },
        "out": "from_file.json"
    });
    std::fs::write(dir.path().join("cfg.json"), cfg.to_string()).unwrap();

    let o = bin()
        .current_dir(dir.path())
        .args(["forward", "-c", "cfg.json"])
        .env("HINGEPLACE_OUT", "from_env.json")
        .env("HINGEPLACE_I_SAFE", "3")
        .output()
        .unwrap();
    assert_eq!(stdout_json(&o)["manifest"], "from_env.json");

    let o = bin()
        .current_dir(dir.path())
        .args(["forward", "-c", "cfg.json", "-o", "from_flag.json"])
        .env("HINGEPLACE_OUT", "from_env.json")
        .output()
        .unwrap();
    assert_eq!(stdout_json(&o)["manifest"], "from_flag.json");

    let o = run(dir.path(), &["forward", "-c", "cfg.json"]);
    assert_eq!(stdout_json(&o)["manifest"], "from_file.json");

    let o = bin()
        .current_dir(dir.path())
        .args(["forward", "-c", "cfg.json", "-o", "nested.json"])
        .env("HINGEPLACE_LAYOUT__ANNULUS_SPACING", "0.01")
        .output()
        .unwrap();
    let fine = stdout_json(&run(dir.path(), &["forward", "-c", "cfg.json", "-o", "fine.json"]));
    let coarse = stdout_json(&o);
    assert!(coarse["n_offtarget"].as_u64() < fine["n_offtarget"].as_u64());
}

#[test]
fn verify_writes_both_tables() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &[
            "verify",
            "-s",
            "theorem1.grid.targets=[[0,0,0.077]]",
            "-s",
            "theorem1.grid.i_safe=[2]",
            "-s",
            "theorem1.grid.i_tot_mul=[2]",
            "-s",
            "theorem1.grid.target_spacing=0.004",
            "-s",
            "theorem1.grid.annulus_spacing=0.006",
            "-s",
            "theorem1.grid.pattern_levels=[1,2]",
            "-o",
            "tables",
        ],
    );
    let s = stdout_json(&o);
    assert!(s["worst_cell_median_percent"].as_f64().unwrap() < 1.0);
    let cells = std::fs::read_to_string(dir.path().join("tables/theorem1_cells.csv")).unwrap();
    assert_eq!(cells.lines().count(), 2);
    let pairs = std::fs::read_to_string(dir.path().join("tables/theorem1_pairs.csv")).unwrap();
    assert_eq!(pairs.lines().count(), 3);
}
