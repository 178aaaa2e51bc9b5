use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use softprop_cli::pipeline::{self, Reconstruction};
use softprop_cli::scenario::{Keyframe, Schedule};
use softprop_cli::{reconstruct_and_score, run_forward, Scenario};

fn preset_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("presets").join(format!("{name}.json"))
}

fn preset(name: &str) -> Scenario {
    Scenario::from_json(&std::fs::read_to_string(preset_path(name)).unwrap()).unwrap()
}

fn softprop(args: &[&std::ffi::OsStr]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_softprop")).args(args).output().unwrap()
}

fn quick_strip(dir: &Path) -> PathBuf {
    let mut s = preset("strip");
    if let Schedule::Random { duration_s, .. } = &mut s.training.schedule {
        *duration_s = 8.0;
    }
    s.training.epochs = 3;
    let p = dir.join("strip.json");
    std::fs::write(&p, s.to_json()).unwrap();
    p
}

#[test]
fn simulate_writes_one_row_per_frame() {
    let dir = tempfile::tempdir().unwrap();
    let out = softprop(&["simulate".as_ref(), "--config".as_ref(), preset_path("strip").as_os_str(), "--out".as_ref(), dir.path().as_os_str()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("recording.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 361);
    assert!(csv.starts_with("t,pressure_kpa,f_0,"));
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("recording.json")).unwrap()).unwrap();
    assert_eq!(manifest["frames"], 361);
    assert_eq!(manifest["seed"], 7);
}

#[test]
fn train_then_estimate_reports_every_marker() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_strip(dir.path());
    for cmd in ["simulate", "train", "estimate"] {
        let out = softprop(&[cmd.as_ref(), "--config".as_ref(), cfg.as_os_str(), "--out".as_ref(), dir.path().as_os_str()]);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["dataset.csv", "dataset.json", "regressor.json", "training.json", "traces.csv"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(m["input"], "learned");
    assert_eq!(m["markers"].as_array().unwrap().len(), 11);
    assert_eq!(m["forces"].as_array().unwrap().len(), 6);
    assert!(m.get("runtime").is_none());
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = softprop(&["frobnicate".as_ref()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn invalid_config_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    let text = std::fs::read_to_string(preset_path("strip")).unwrap().replace("\"version\": 1", "\"version\": 1, \"extra\": 0");
    std::fs::write(&bad, text).unwrap();
    for cfg in [bad, dir.path().join("missing.json")] {
        let out = softprop(&["simulate".as_ref(), "--config".as_ref(), cfg.as_os_str(), "--out".as_ref(), dir.path().as_os_str()]);
        assert_eq!(out.status.code(), Some(1));
        let line = String::from_utf8_lossy(&out.stderr).lines().last().unwrap().to_string();
        let err: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(err["error"]["code"], 1);
    }
    assert!(!dir.path().join("recording.csv").exists());
}

#[test]
fn perfect_reconstruction_scores_zero() {
    let s = preset("strip");
    let rec = run_forward(&s, &s.schedule, s.seed).unwrap();
    let m = pipeline::score(&s, &rec, &Reconstruction::from_recording(&rec), "exact").unwrap();
    assert_eq!(m.mean_marker_error_pct, 0.0);
    assert_eq!(m.sensor_end_error_pct, 0.0);
    assert_eq!(m.tip_error_pct, 0.0);
    assert_eq!(m.force_error_pct, Some(0.0));
    assert_eq!(m.excluded_markers, vec![0]);
}

#[test]
fn empty_schedule_stays_at_rest() {
    let mut s = preset("finger");
    s.schedule = Schedule::Keyframes { duration_s: 0.5, keyframes: vec![] };
    let rec = run_forward(&s, &s.schedule, 3).unwrap();
    assert_eq!(rec.frames.len(), 16);
    let first = &rec.frames[0];
    for f in &rec.frames {
        assert_eq!(f.markers, first.markers);
        assert_eq!(f.sensor_end, first.sensor_end);
        assert!(f.shape.iter().all(|&v| v == 0.0));
        assert!(f.force_n.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn tip_deflection_grows_with_load_at_every_site() {
    let base = preset("strip");
    for site in 0..6 {
        let mut s = base.clone();
        let mut force = vec![0.0; 6];
        force[site] = 1.5;
        s.schedule = Schedule::Keyframes { duration_s: 0.5, keyframes: vec![Keyframe { time_s: 0.5, pressure_kpa: 0.0, force_n: force }] };
        let rec = run_forward(&s, &s.schedule, 1).unwrap();
        let tips: Vec<f64> = rec.frames.iter().map(|f| f.markers.last().unwrap().y).collect();
        assert!(tips.windows(2).all(|w| w[1] > w[0]), "site {site}: {tips:?}");
    }
}

#[test]
fn exact_shape_strip_tracks_the_tip() {
    let s = preset("strip");
    let rec = run_forward(&s, &s.schedule, s.seed).unwrap();
    let (m, recon) = reconstruct_and_score(&rec, None, &s).unwrap();
    assert_eq!(recon.markers.len(), rec.frames.len());
    assert!(m.tip_error_pct < 5.0, "{}", m.tip_error_pct);
    assert!(m.sensor_end_error_pct < 5.0, "{}", m.sensor_end_error_pct);
}
