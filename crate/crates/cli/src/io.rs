//! File formats: scenario JSON, recording CSV + manifest, dataset CSV +
//! manifest, regressor JSON, metrics/calibration JSON and trace CSV.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use softprop_core::sensor::{Regressor, SensorLayout, ShapeMode};
use softprop_core::Point2;

use crate::error::CliError;
use crate::pipeline::{Frame, Reconstruction, Recording};
use crate::scenario::Scenario;

pub const FORMAT_VERSION: u32 = 1;

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io { path: path.to_path_buf(), message: e.to_string() })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Io { path: dir.to_path_buf(), message: e.to_string() })?;
    }
    fs::write(path, text).map_err(|e| CliError::Io { path: path.to_path_buf(), message: e.to_string() })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Format { path: path.to_path_buf(), message: e.to_string() })?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::Format { path: path.to_path_buf(), message: e.to_string() })
}

pub fn load_scenario(path: &Path) -> Result<Scenario, CliError> {
    let text = read_text(path)?;
    Scenario::from_json(&text).map_err(|e| match e {
        softprop_core::Error::InvalidInput(m) => CliError::Config(format!("{}: {m}", path.display())),
        other => other.into(),
    })
}

pub fn load_regressor(path: &Path) -> Result<Regressor, CliError> {
    Regressor::from_json(&read_text(path)?).map_err(|e| CliError::Format { path: path.to_path_buf(), message: e.to_string() })
}

fn csv_error(path: &Path, e: impl ToString) -> CliError {
    CliError::Format { path: path.to_path_buf(), message: e.to_string() }
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn to_csv(header: Vec<String>, rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii csv")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingManifest {
    pub version: u32,
    pub scenario: String,
    pub scenario_sha256: String,
    pub seed: u64,
    pub frame_rate_hz: f64,
    pub frames: usize,
    pub mode: ShapeMode,
    pub force_sites: usize,
    pub markers: usize,
    pub segments: usize,
    pub shape_width: usize,
    pub columns: Vec<String>,
}

fn recording_header(sites: usize, markers: usize, segments: usize, width: usize) -> Vec<String> {
    let mut h = vec!["t".to_string(), "pressure_kpa".to_string()];
    h.extend((0..sites).map(|j| format!("f_{j}")));
    for i in 0..markers {
        h.push(format!("m_{i}_x"));
        h.push(format!("m_{i}_y"));
    }
    h.push("e_x".into());
    h.push("e_y".into());
    h.extend((0..segments).map(|j| format!("r_{j}")));
    h.extend((0..width).map(|j| format!("s_{j}")));
    h
}

/// Column counts (force sites, markers, segments, shape width) of a recording.
fn dims(rec: &Recording) -> (usize, usize, usize, usize) {
    rec.frames.first().map_or((0, 0, 0, 0), |f| (f.force_n.len(), f.markers.len(), f.resistances.len(), f.shape.len()))
}

pub fn recording_csv(rec: &Recording) -> String {
    let (sites, markers, segments, width) = dims(rec);
    let rows = rec
        .frames
        .iter()
        .map(|f| {
            let mut r = vec![fmt(f.time_s), fmt(f.pressure_kpa)];
            r.extend(f.force_n.iter().map(|&v| fmt(v)));
            for m in &f.markers {
                r.push(fmt(m.x));
                r.push(fmt(m.y));
            }
            r.push(fmt(f.sensor_end.x));
            r.push(fmt(f.sensor_end.y));
            r.extend(f.resistances.iter().map(|&v| fmt(v)));
            r.extend(f.shape.iter().map(|&v| fmt(v)));
            r
        })
        .collect();
    to_csv(recording_header(sites, markers, segments, width), rows)
}

pub fn recording_manifest(rec: &Recording, scenario: &Scenario, seed: u64) -> RecordingManifest {
    let (sites, markers, segments, width) = dims(rec);
    RecordingManifest {
        version: FORMAT_VERSION,
        scenario: scenario.name.clone(),
        scenario_sha256: scenario.hash(seed),
        seed,
        frame_rate_hz: scenario.frame_rate_hz,
        frames: rec.frames.len(),
        mode: scenario.device.mode(),
        force_sites: sites,
        markers,
        segments,
        shape_width: width,
        columns: recording_header(sites, markers, segments, width),
    }
}

pub fn write_recording(csv_path: &Path, rec: &Recording, scenario: &Scenario, seed: u64) -> Result<PathBuf, CliError> {
    write_text(csv_path, &recording_csv(rec))?;
    let manifest = csv_path.with_extension("json");
    write_json(&manifest, &recording_manifest(rec, scenario, seed))?;
    Ok(manifest)
}

pub fn parse_recording(text: &str, path: &Path) -> Result<Recording, CliError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header: Vec<String> = r.headers().map_err(|e| csv_error(path, e))?.iter().map(str::to_string).collect();
    let count = |p: &str| header.iter().filter(|h| h.starts_with(p)).count();
    let (sites, markers, segments, width) = (count("f_"), count("m_") / 2, count("r_"), count("s_"));
    if header != recording_header(sites, markers, segments, width) {
        return Err(csv_error(path, "unexpected recording columns"));
    }
    let mut frames = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let v: Vec<f64> =
            rec.iter().map(|s| s.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|e| csv_error(path, format!("row {}: {e}", line + 1)))?;
        if v.len() != header.len() {
            return Err(csv_error(path, format!("row {} has {} fields", line + 1, v.len())));
        }
        let mut it = v.into_iter();
        let mut take = |n: usize| -> Vec<f64> { it.by_ref().take(n).collect() };
        let head = take(2);
        let force_n = take(sites);
        let m = take(2 * markers);
        let e = take(2);
        let resistances = take(segments);
        let shape = take(width);
        frames.push(Frame {
            time_s: head[0],
            pressure_kpa: head[1],
            force_n,
            markers: m.chunks(2).map(|c| Point2::new(c[0], c[1])).collect(),
            sensor_end: Point2::new(e[0], e[1]),
            resistances,
            shape,
        });
    }
    Ok(Recording { frames })
}

pub fn read_recording(path: &Path) -> Result<Recording, CliError> {
    parse_recording(&read_text(path)?, path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub mode: ShapeMode,
    pub window: usize,
    pub frames: usize,
    pub samples: usize,
    pub resample_bins: usize,
    pub seed: u64,
    /// Ω per column `r_j`; shape columns are rad (orientation) or mm (position).
    pub layout: SensorLayout,
}

/// Per-frame resistances and shape: `t, r_0.., s_0..`.
pub fn dataset_csv(rec: &Recording) -> String {
    let (_, _, segments, width) = dims(rec);
    let mut header = vec!["t".to_string()];
    header.extend((0..segments).map(|j| format!("r_{j}")));
    header.extend((0..width).map(|j| format!("s_{j}")));
    let rows = rec
        .frames
        .iter()
        .map(|f| {
            let mut r = vec![fmt(f.time_s)];
            r.extend(f.resistances.iter().map(|&v| fmt(v)));
            r.extend(f.shape.iter().map(|&v| fmt(v)));
            r
        })
        .collect();
    to_csv(header, rows)
}

/// Applied and estimated forces, and estimated sensor-end and tip positions.
pub fn traces_csv(rec: &Recording, recon: &Reconstruction) -> String {
    let (sites, _, _, _) = dims(rec);
    let mut header = vec!["t".to_string()];
    for j in 0..sites {
        header.push(format!("f_{j}_applied"));
        header.push(format!("f_{j}_estimated"));
    }
    header.extend(["e_x", "e_y", "tip_x", "tip_y"].map(String::from));
    let rows = rec
        .frames
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let mut r = vec![fmt(f.time_s)];
            for j in 0..sites {
                r.push(fmt(f.force_n[j]));
                r.push(fmt(recon.force_n[k][j]));
            }
            let tip = recon.markers[k].last().copied().unwrap_or(Point2::new(0.0, 0.0));
            r.extend([recon.sensor_end[k].x, recon.sensor_end[k].y, tip.x, tip.y].map(fmt));
            r
        })
        .collect();
    to_csv(header, rows)
}
