use std::path::Path;
use std::process::{Command, Output};

use depthaudit::bench::{InjectedBug, SceneSpec};
use depthaudit::io::{decode_ply, CaptureBundle};
use depthaudit::metadata::{bundled_fixture, parse_meta, CaptureMeta};
use depthaudit::DepthMap;
use nalgebra::{DMatrix, Point3};
use serde_json::Value;
use tempfile::TempDir;

fn depthaudit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_depthaudit"))
        .args(args)
        .env_remove("DEPTHAUDIT_FIXTURES")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fixture(dir: &Path, name: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, bundled_fixture(name).unwrap()).unwrap();
    p
}

fn fixture_meta(name: &str) -> CaptureMeta {
    parse_meta(bundled_fixture(name).unwrap().as_bytes()).unwrap()
}

fn simulate(dir: &Path, spec: &SceneSpec) -> std::path::PathBuf {
    let scene = dir.join("scene.json");
    std::fs::write(&scene, serde_json::to_string(spec).unwrap()).unwrap();
    let out = dir.join("sim");
    let o = depthaudit(&["simulate", s(&scene), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn truncated_metadata_is_an_error() {
    let tmp = TempDir::new().unwrap();
    let av = fixture(tmp.path(), "ipad129_5gen_av_ios14.json");
    let ar = tmp.path().join("cut.json");
    let text = bundled_fixture("ipad129_5gen_arkit_ios14.json").unwrap();
    std::fs::write(&ar, &text[..text.len() / 2]).unwrap();
    let o = depthaudit(&["audit", "--av", s(&av), "--ar", s(&ar)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!o.stderr.is_empty());
}

#[test]
fn audit_writes_json_report() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("audit.json");
    let o = depthaudit(&["audit", "--fixtures", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let v: Value = serde_json::from_slice(&std::fs::read(out).unwrap()).unwrap();
    assert_eq!(v["schema_version"], 1);
}

#[test]
fn fixtures_env_overrides_bundled_set() {
    let tmp = TempDir::new().unwrap();
    fixture(tmp.path(), "iphone11pro_av_ios15.json");
    fixture(tmp.path(), "iphone11pro_arkit_ios15.json");
    let o = Command::new(env!("CARGO_BIN_EXE_depthaudit"))
        .args(["audit", "--fixtures", "--json"])
        .env("DEPTHAUDIT_FIXTURES", tmp.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["verdicts"].as_array().unwrap().len(), 1);
}

#[test]
fn fix_intrinsics_for_both_sessions() {
    let tmp = TempDir::new().unwrap();
    let av = fixture(tmp.path(), "ipad129_5gen_av_ios14.json");
    let ar = fixture(tmp.path(), "ipad129_5gen_arkit_ios14.json");
    for (session, expected) in [("av", 525.97), ("ar", 361.58)] {
        let out = tmp.path().join(format!("{session}.json"));
        let o = depthaudit(&[
            "fix-intrinsics", "--av-meta", s(&av), "--ar-meta", s(&ar), "--session", session, "--out", s(&out),
        ]);
        assert_eq!(o.status.code(), Some(0));
        assert!(stdout(&o).contains(&format!("{expected:.2}")), "{}", stdout(&o));
        let meta = CaptureMeta::from_path(&out).unwrap();
        let f = meta.depth_intrinsics_vga().unwrap().f;
        assert!((f - expected).abs() < 0.01, "{session}: {f}");
    }
}

#[test]
fn fix_intrinsics_on_consistent_pair_is_a_no_op() {
    let tmp = TempDir::new().unwrap();
    let av = fixture(tmp.path(), "iphone11pro_av_ios15.json");
    let ar = fixture(tmp.path(), "iphone11pro_arkit_ios15.json");
    let out = tmp.path().join("out.json");
    let o = depthaudit(&["fix-intrinsics", "--av-meta", s(&av), "--ar-meta", s(&ar), "--session", "av", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("no correction needed"));
    let before = fixture_meta("iphone11pro_av_ios15.json");
    assert_eq!(CaptureMeta::from_path(&out).unwrap().depth_f(), before.depth_f());
}

fn bundle_with(dir: &Path, depth: DepthMap) -> std::path::PathBuf {
    let b = CaptureBundle {
        meta: fixture_meta("iphone11pro_av_ios15.json"),
        depth,
        rgb: None,
        corners: None,
        board: None,
    };
    let p = dir.join("bundle");
    b.write(&p).unwrap();
    p
}

fn unproject(bundle: &Path, out: &Path) -> Vec<Point3<f64>> {
    let o = depthaudit(&["unproject", s(bundle), "--out", s(out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    decode_ply(&std::fs::read_to_string(out).unwrap()).unwrap()
}

#[test]
fn unproject_all_invalid_gives_empty_cloud() {
    let tmp = TempDir::new().unwrap();
    let b = bundle_with(tmp.path(), DepthMap::invalid());
    let text_path = tmp.path().join("c.ply");
    assert!(unproject(&b, &text_path).is_empty());
    assert!(std::fs::read_to_string(text_path).unwrap().contains("element vertex 0"));
}

#[test]
fn unproject_constant_depth() {
    let tmp = TempDir::new().unwrap();
    let b = bundle_with(tmp.path(), DepthMap::constant(2.0).unwrap());
    let pts = unproject(&b, &tmp.path().join("c.ply"));
    assert_eq!(pts.len(), 640 * 480);
    assert!(pts.iter().all(|p| p.z == 2.0));
}

#[test]
fn unprojected_simulated_plane_is_flat() {
    let tmp = TempDir::new().unwrap();
    let mut spec = SceneSpec::calibration_default(565.0, 1, 5);
    spec.corner_noise_sigma = 0.0;
    spec.depth_noise_sigma = 0.0;
    let sim = simulate(tmp.path(), &spec);
    let pts = unproject(&sim.join("view_000"), &tmp.path().join("c.ply"));
    assert!(pts.len() > 1000);
    let n = pts.len() as f64;
    let c = pts.iter().fold(nalgebra::Vector3::zeros(), |a, p| a + p.coords) / n;
    let m = DMatrix::from_fn(pts.len(), 3, |i, j| pts[i][j] - c[j]);
    let sv = m.svd(false, false).singular_values;
    let rms = sv.min() / n.sqrt();
    assert!(rms < 1e-6, "plane residual rms {rms:e} m");
}

#[test]
fn verify_depth_writes_report_and_histogram() {
    let tmp = TempDir::new().unwrap();
    let spec = SceneSpec::frontal(565.0, 0.2, 3);
    let sim = simulate(tmp.path(), &spec);
    let out = tmp.path().join("verify");
    let o = depthaudit(&["verify-depth", s(&sim.join("view_000")), "--out", s(&out), "--bin-width", "0.5"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["schema_version"], 1);
    assert!(report["mean_d"].as_f64().unwrap().abs() < 0.01);
    assert!(std::fs::read_to_string(out.join("hist.svg")).unwrap().starts_with("<svg"));
    assert!(std::fs::read_to_string(out.join("hist.csv")).unwrap().starts_with("bin_low,bin_high,count"));
}

#[test]
fn calibrate_needs_enough_views() {
    let tmp = TempDir::new().unwrap();
    let spec = SceneSpec::calibration_default(565.0, 1, 1);
    let sim = simulate(tmp.path(), &spec);
    let o = depthaudit(&["calibrate", s(&sim)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn calibrate_recovers_focal_from_simulated_dataset() {
    let tmp = TempDir::new().unwrap();
    let mut spec = SceneSpec::calibration_default(565.85, 12, 21);
    spec.corner_noise_sigma = 0.2;
    spec.injected_bug = InjectedBug::FocalLie(1.06);
    let sim = simulate(tmp.path(), &spec);
    let o = depthaudit(&["calibrate", s(&sim)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&std::fs::read(sim.join("calibration.json")).unwrap()).unwrap();
    let f = v["f"].as_f64().unwrap();
    assert!((f - 565.85).abs() / 565.85 < 0.005, "{f}");
    assert!(v["focal_discrepancy_pct"].as_f64().unwrap() > 5.0);
}

#[test]
fn simulated_focal_lie_is_flagged() {
    let tmp = TempDir::new().unwrap();
    let mut spec = SceneSpec::frontal(565.0, 0.25, 2);
    spec.injected_bug = InjectedBug::FocalLie(1.0754);
    let sim = simulate(tmp.path(), &spec);
    let o = depthaudit(&["audit", "--av", s(&sim.join("meta.json")), "--ar", s(&sim.join("meta_arkit.json"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("WrongFocal"), "{}", stdout(&o));
}

#[test]
fn bad_config_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"no_such_key": 1}"#).unwrap();
    let o = depthaudit(&["--config", s(&cfg), "audit", "--fixtures"]);
    assert_eq!(o.status.code(), Some(1));
}
