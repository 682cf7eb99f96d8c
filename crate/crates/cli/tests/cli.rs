use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn csc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csc-hdr"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = csc(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn results(dir: &Path) -> Vec<csv::StringRecord> {
    let mut r = csv::Reader::from_path(dir.join("results.csv")).unwrap();
    r.records().map(|x| x.unwrap()).collect()
}

#[test]
fn maskgen_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    for name in ["a.pfm", "b.pfm"] {
        ok(d, &["maskgen", "--kind", "four_exposure", "--width", "64", "--height", "64", "--seed", "7", "--out", name]);
    }
    assert_eq!(fs::read(d.join("a.pfm")).unwrap(), fs::read(d.join("b.pfm")).unwrap());
    assert_eq!(fs::read(d.join("a.json")).unwrap(), fs::read(d.join("b.json")).unwrap());
    assert!(d.join("a.provenance.json").exists());
}

#[test]
fn maskgen_without_kind_is_usage_error() {
    let tmp = TempDir::new().unwrap();
    let out = csc(tmp.path(), &["maskgen", "--width", "8", "--height", "8", "--out", "m.pfm"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn maskgen_rejects_bad_parameters_with_usage_code() {
    let tmp = TempDir::new().unwrap();
    let out = csc(tmp.path(), &["maskgen", "--kind", "binary", "--p-on", "1.5", "--width", "8", "--height", "8", "--out", "m.pfm"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gaussian_mask_uses_default_moments() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &["maskgen", "--kind", "gaussian", "--width", "16", "--height", "16", "--out", "g.pfm"]);
    let meta = json(&tmp.path().join("g.json"));
    let spec = &meta["parameters"];
    assert_eq!(spec["kind"], "gaussian");
    assert_eq!(spec["mean"], 0.6);
    assert_eq!(spec["stddev"], 0.1);
}

#[test]
fn missing_input_exits_with_one() {
    let tmp = TempDir::new().unwrap();
    let out = csc(tmp.path(), &["reconstruct", "--capture", "absent.json", "--out", "r.pfm"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn simulate_reconstruct_eval_pipeline() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, &["simulate", "--synthetic", "--width", "48", "--height", "48", "--out", "cap.json"]);
    ok(d, &["reconstruct", "--capture", "cap.json", "--out", "rec.pfm", "--trace", "trace.csv"]);
    ok(d, &["eval", "--rec", "rec.pfm", "--gt", "cap.scene.pfm", "--out-dir", "ev"]);
    let report = json(&d.join("ev/report.json"));
    let psnr = report["psnr_db"].as_f64().expect("finite psnr");
    assert!(psnr > 20.0, "psnr {psnr}");
    assert!(report["ssim_mean"].as_f64().unwrap() <= 1.0);
    for f in ["error_map.png", "false_color_gt.png", "false_color_rec.png", "scanline.csv"] {
        assert!(d.join("ev").join(f).exists(), "{f}");
    }
    let prov = json(&d.join("rec.provenance.json"));
    assert_eq!(prov["command"], "reconstruct");
    assert_eq!(prov["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(prov["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    // Beta falls back to its default when the flag is omitted.
    assert_eq!(prov["config"]["solver"]["beta"], 1.5e-5);
    let trace = fs::read_to_string(d.join("trace.csv")).unwrap();
    assert!(trace.starts_with("iter,objective,r_primal,r_dual"));
}

#[test]
fn eval_against_itself_is_exact() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, &["simulate", "--synthetic", "--width", "16", "--height", "16", "--out", "cap.json"]);
    ok(d, &["eval", "--rec", "cap.scene.pfm", "--gt", "cap.scene.pfm", "--out-dir", "ev"]);
    let report = json(&d.join("ev/report.json"));
    assert_eq!(report["psnr_db"], "inf");
    assert_eq!(report["ssim_mean"], 1.0);
}

#[test]
fn baseline_writes_radiance() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, &["simulate", "--synthetic", "--width", "24", "--height", "24", "--out", "cap.json"]);
    ok(d, &["baseline", "--capture", "cap.json", "--out", "omp.pfm"]);
    assert!(d.join("omp.pfm").exists());
    assert_eq!(json(&d.join("omp.provenance.json"))["command"], "baseline");
}

#[test]
fn video_mode_writes_frames() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, &["simulate", "--synthetic", "--width", "24", "--height", "24", "--stops", "6", "--out", "f0.json"]);
    ok(d, &["simulate", "--synthetic", "--width", "24", "--height", "24", "--stops", "8", "--out", "f1.json"]);
    ok(d, &["reconstruct", "--capture", "f0.json", "f1.json", "--max-iters", "5", "--out", "frames"]);
    assert!(d.join("frames/frame_0000.pfm").exists());
    assert!(d.join("frames/frame_0001.pfm").exists());
    assert!(d.join("frames/provenance.json").exists());
}

#[test]
fn learn_writes_bank() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, &["learn", "--dead-leaves", "1", "--dead-leaves-size", "32", "--k", "4", "--size", "5", "--outer-iters", "2", "--tile", "32", "--out", "bank.pfm"]);
    let header = json(&d.join("bank.json"));
    assert_eq!(header["k"], 4);
    assert_eq!(header["size"], 5);
    assert_eq!(header["provenance"]["training_data"]["dead_leaves"], 1);
}

#[test]
fn empty_sweep_matches_reconstruct() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, &["simulate", "--synthetic", "--width", "32", "--height", "32", "--out", "cap.json"]);
    ok(d, &["reconstruct", "--capture", "cap.json", "--max-iters", "20", "--out", "rec.pfm"]);
    let cfg = r#"{
        "synthetic": {"width": 32, "height": 32, "stops": 10},
        "solver": {"max_iters": 20},
        "output_dir": "sweep"
    }"#;
    fs::write(d.join("exp.json"), cfg).unwrap();
    ok(d, &["sweep", "--config", "exp.json"]);
    let rows = results(&d.join("sweep"));
    assert_eq!(rows.len(), 1);
    assert_eq!(&rows[0][8], "ok");
    let cell = d.join("sweep").join(&rows[0][0]);
    assert_eq!(fs::read(cell.join("rec.pfm")).unwrap(), fs::read(d.join("rec.pfm")).unwrap());
    assert!(cell.join("error_map.png").exists());
    assert!(cell.join("false_color_rec.png").exists());
}

#[test]
fn beta_sweep_sparsity_decreases() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let cfg = r#"{
        "synthetic": {"width": 48, "height": 48, "stops": 8},
        "output_dir": "sweep",
        "sweep": {"betas": [1.5e-7, 1.5e-5, 1.5e-3]}
    }"#;
    fs::write(d.join("exp.json"), cfg).unwrap();
    ok(d, &["sweep", "--config", "exp.json", "--jobs", "2"]);
    let rows = results(&d.join("sweep"));
    let active: Vec<usize> = rows.iter().map(|r| r[7].parse().unwrap()).collect();
    assert_eq!(active.len(), 3);
    assert!(active[0] > active[1] && active[1] > active[2], "{active:?}");
}

#[test]
fn mask_sweep_orders_binary_below_uniform() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let cfg = r#"{
        "output_dir": "sweep",
        "sweep": {"mask_kinds": ["binary", "uniform", "four_exposure"]}
    }"#;
    fs::write(d.join("exp.json"), cfg).unwrap();
    ok(d, &["sweep", "--config", "exp.json"]);
    let rows = results(&d.join("sweep"));
    let psnr = |kind: &str| -> f64 {
        rows.iter().find(|r| &r[2] == kind).unwrap()[5].parse().unwrap()
    };
    assert!(psnr("binary") < psnr("uniform"), "{} vs {}", psnr("binary"), psnr("uniform"));
}

#[test]
fn failing_cell_does_not_stop_sweep() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let cfg = r#"{
        "scenes": ["missing.pfm", "synthetic"],
        "synthetic": {"width": 16, "height": 16, "stops": 6},
        "solver": {"max_iters": 3},
        "output_dir": "sweep"
    }"#;
    fs::write(d.join("exp.json"), cfg).unwrap();
    ok(d, &["sweep", "--config", "exp.json"]);
    let rows = results(&d.join("sweep"));
    assert_eq!(rows.len(), 2);
    assert!(rows[0][8].starts_with("error"));
    assert_eq!(&rows[1][8], "ok");
}
