//! End-to-end pipelines: synthetic forward recordings, regressor training,
//! reconstruction through the inverse model, scoring and calibration.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use softprop_core::calibration::{self, pressure_sweep, ForceTrace, SweepLevel};
use softprop_core::devices::{Device, KPA_TO_N_PER_MM2};
use softprop_core::sensor::{
    build_dataset, predict_shape, resample_dataset, simulate_resistance, train_regressor, Dataset, Regressor, ResistanceVector, SensorRecording,
    SplitFractions, TrainReport,
};
use softprop_core::{CalibrationResult, Error, Material, Point2};

use crate::error::CliError;
use crate::scenario::{Efforts, Scenario, Schedule};

/// One frame of ground truth and sensor output.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub time_s: f64,
    pub pressure_kpa: f64,
    pub force_n: Vec<f64>,
    pub markers: Vec<Point2>,
    /// Point at the far end of the shape-vector span (end of the sensor).
    pub sensor_end: Point2,
    pub resistances: Vec<f64>,
    /// Shape vector relative to rest.
    pub shape: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Recording {
    pub frames: Vec<Frame>,
}

impl Recording {
    pub fn sensor_recording(&self) -> SensorRecording {
        SensorRecording {
            resistances: self.frames.iter().map(|f| f.resistances.clone()).collect(),
            shapes: self.frames.iter().map(|f| f.shape.clone()).collect(),
        }
    }
}

fn at_frame(frame: usize) -> impl Fn(Error) -> CliError {
    move |error| CliError::Core { error, frame: Some(frame) }
}

fn sensor_end(device: &Device) -> Point2 {
    *device.model.positions(&device.nominal).last().expect("nominal span has points")
}

/// Steps the device through a schedule, recording markers, sensor readings
/// and shape at every frame.
pub fn run_forward(scenario: &Scenario, schedule: &Schedule, seed: u64) -> Result<Recording, CliError> {
    let mut device = scenario.build_device()?;
    schedule.validate(device.force_rows(), device.pressure_rows() == 1)?;
    let efforts = schedule.sample(device.force_rows(), scenario.frame_rate_hz, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frames = Vec::with_capacity(efforts.len());
    for (k, e) in efforts.into_iter().enumerate() {
        let applied = device.efforts(e.pressure_kpa, &e.force_n).map_err(at_frame(k))?;
        device.model.solve_forward(&applied).map_err(at_frame(k))?;
        let profile = device.curvature().map_err(at_frame(k))?;
        let r = simulate_resistance(&device.layout, &profile, k, &mut rng).map_err(at_frame(k))?;
        let Efforts { time_s, pressure_kpa, force_n } = e;
        frames.push(Frame {
            time_s,
            pressure_kpa,
            force_n,
            markers: device.marker_positions(),
            sensor_end: sensor_end(&device),
            resistances: r.r,
            shape: device.shape().map_err(at_frame(k))?,
        });
    }
    Ok(Recording { frames })
}

/// Seed of the training recording, kept apart from the evaluation seed so the
/// two never share noise or load draws.
pub fn training_seed(seed: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1)
}

pub struct Trained {
    pub recording: Recording,
    pub dataset: Dataset,
    pub regressor: Regressor,
    pub report: TrainReport,
}

/// Simulates the training schedule, builds the windowed dataset, equalizes
/// the training split and fits the device's regressor preset.
pub fn train(scenario: &Scenario, seed: u64) -> Result<Trained, CliError> {
    let tseed = training_seed(seed);
    let recording = run_forward(scenario, &scenario.training.schedule, tseed)?;
    let preset = scenario.preset();
    let mode = scenario.device.mode();
    let raw = build_dataset(&[recording.sensor_recording()], mode, preset.window(), SplitFractions::default())?;
    let dataset = if scenario.training.resample_bins > 0 { resample_dataset(&raw, scenario.training.resample_bins, tseed)? } else { raw };
    let (regressor, report) = train_regressor(&dataset, preset, &scenario.training.options(tseed))?;
    Ok(Trained { recording, dataset, regressor, report })
}

/// What the inverse model made of a recording, frame by frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Reconstruction {
    pub markers: Vec<Vec<Point2>>,
    pub sensor_end: Vec<Point2>,
    pub force_n: Vec<Vec<f64>>,
    /// Wall-clock seconds per frame; never written to output files.
    pub frame_seconds: Vec<f64>,
}

impl Reconstruction {
    /// The recording's own ground truth, as if estimation were perfect.
    pub fn from_recording(rec: &Recording) -> Self {
        Self {
            markers: rec.frames.iter().map(|f| f.markers.clone()).collect(),
            sensor_end: rec.frames.iter().map(|f| f.sensor_end).collect(),
            force_n: rec.frames.iter().map(|f| f.force_n.clone()).collect(),
            frame_seconds: vec![0.0; rec.frames.len()],
        }
    }
}

/// Shape fed to the estimator at each frame: the recorded one, or the
/// regressor's prediction from the latest window of resistances. Windows that
/// would reach before the first frame repeat it.
pub fn shape_inputs(rec: &Recording, regressor: Option<&Regressor>) -> Result<Vec<Vec<f64>>, CliError> {
    let Some(reg) = regressor else {
        return Ok(rec.frames.iter().map(|f| f.shape.clone()).collect());
    };
    let mut out = Vec::with_capacity(rec.frames.len());
    for k in 0..rec.frames.len() {
        let window: Vec<ResistanceVector> = (0..reg.window)
            .map(|j| {
                let idx = (k + j + 1).saturating_sub(reg.window);
                ResistanceVector { r: rec.frames[idx].resistances.clone(), timestamp: idx }
            })
            .collect();
        out.push(predict_shape(reg, &window).map_err(at_frame(k))?.entries);
    }
    Ok(out)
}

/// Feeds shape increments and known pressure changes to the estimator.
pub fn reconstruct(scenario: &Scenario, rec: &Recording, regressor: Option<&Regressor>) -> Result<Reconstruction, CliError> {
    let mut device = scenario.build_device()?;
    if let Some(reg) = regressor {
        if reg.mode != device.mode || reg.output_width != device.model.effector_width() || reg.segments != device.layout.segment_count() {
            return Err(CliError::Core {
                error: Error::ShapeMismatch { expected: device.model.effector_width(), got: reg.output_width },
                frame: None,
            });
        }
    }
    let inputs = shape_inputs(rec, regressor)?;
    let chamber = device.pressure_rows() == 1;
    let offset = device.pressure_rows();
    let mut out = Reconstruction::default();
    let mut prev_shape = vec![0.0; device.model.effector_width()];
    let mut prev_p = 0.0;
    for (k, (frame, shape)) in rec.frames.iter().zip(&inputs).enumerate() {
        if shape.len() != prev_shape.len() {
            return Err(CliError::Core { error: Error::ShapeMismatch { expected: prev_shape.len(), got: shape.len() }, frame: Some(k) });
        }
        let start = Instant::now();
        let delta: Vec<f64> = shape.iter().zip(&prev_shape).map(|(a, b)| a - b).collect();
        let dp = chamber.then_some((frame.pressure_kpa - prev_p) * KPA_TO_N_PER_MM2);
        device.model.estimate_step(&delta, dp).map_err(at_frame(k))?;
        out.frame_seconds.push(start.elapsed().as_secs_f64());
        out.markers.push(device.marker_positions());
        out.sensor_end.push(sensor_end(&device));
        out.force_n.push(device.model.applied_efforts()[offset..].to_vec());
        prev_shape.clone_from(shape);
        prev_p = frame.pressure_kpa;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerMetric {
    pub index: usize,
    pub arc_mm: f64,
    /// Mean over frames of |estimated − true| / |true − base reference|, in %.
    pub mean_error_pct: Option<f64>,
    pub max_error_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceMetric {
    pub site: usize,
    pub range_n: f64,
    /// Mean |estimated − applied| as % of the applied range; absent when the
    /// site is never loaded.
    pub mean_error_pct: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RuntimeStats {
    pub total_s: f64,
    pub mean_frame_ms: f64,
    pub max_frame_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub input: String,
    pub frames: usize,
    pub markers: Vec<MarkerMetric>,
    /// Markers coinciding with the base reference have no normalizer.
    pub excluded_markers: Vec<usize>,
    pub mean_marker_error_pct: f64,
    /// Error at the end of the sensorized span.
    pub sensor_end_error_pct: f64,
    /// Error at the last marker.
    pub tip_error_pct: f64,
    pub forces: Vec<ForceMetric>,
    pub force_error_pct: Option<f64>,
    #[serde(skip)]
    pub runtime: RuntimeStats,
}

struct Accum {
    sum: f64,
    max: f64,
    n: usize,
}

impl Accum {
    fn new() -> Self {
        Self { sum: 0.0, max: 0.0, n: 0 }
    }
    fn push(&mut self, v: f64) {
        self.sum += v;
        self.max = self.max.max(v);
        self.n += 1;
    }
    fn mean(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }
}

/// Normalizers below this (mm) mark a point as sitting on the base reference.
const BASE_EPS_MM: f64 = 1e-6;

fn normalized(est: Point2, truth: Point2, base: Point2) -> Option<f64> {
    let d = truth.distance(base);
    (d > BASE_EPS_MM).then(|| 100.0 * est.distance(truth) / d)
}

pub fn score(scenario: &Scenario, rec: &Recording, recon: &Reconstruction, input: &str) -> Result<MetricsReport, CliError> {
    let device = scenario.build_device()?;
    let n = rec.frames.len();
    if recon.markers.len() != n || recon.force_n.len() != n || recon.sensor_end.len() != n {
        return Err(CliError::Core { error: Error::ShapeMismatch { expected: n, got: recon.markers.len() }, frame: None });
    }
    let base = device.base_reference;
    let marker_count = device.markers.anchors.len();
    let mut acc: Vec<Accum> = (0..marker_count).map(|_| Accum::new()).collect();
    let mut excluded = vec![false; marker_count];
    let mut end = Accum::new();
    for (frame, (est, est_end)) in rec.frames.iter().zip(recon.markers.iter().zip(&recon.sensor_end)) {
        if frame.markers.len() != marker_count || est.len() != marker_count {
            return Err(CliError::Core { error: Error::ShapeMismatch { expected: marker_count, got: frame.markers.len() }, frame: None });
        }
        for (i, (e, t)) in est.iter().zip(&frame.markers).enumerate() {
            match normalized(*e, *t, base) {
                Some(v) => acc[i].push(v),
                None => excluded[i] = true,
            }
        }
        if let Some(v) = normalized(*est_end, frame.sensor_end, base) {
            end.push(v);
        }
    }
    let markers: Vec<MarkerMetric> = acc
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let keep = !excluded[i];
            MarkerMetric {
                index: i,
                arc_mm: device.markers.arc_positions[i],
                mean_error_pct: a.mean().filter(|_| keep),
                max_error_pct: (keep && a.n > 0).then_some(a.max),
            }
        })
        .collect();
    let kept: Vec<f64> = markers.iter().filter_map(|m| m.mean_error_pct).collect();
    let mean_marker = if kept.is_empty() { 0.0 } else { kept.iter().sum::<f64>() / kept.len() as f64 };

    let sites = device.force_rows();
    let mut forces = Vec::with_capacity(sites);
    for j in 0..sites {
        let applied: Vec<f64> = rec.frames.iter().map(|f| f.force_n[j]).collect();
        let lo = applied.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = applied.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = if n > 0 { hi - lo } else { 0.0 };
        let err = (range > 0.0).then(|| {
            let total: f64 = applied.iter().zip(&recon.force_n).map(|(a, e)| (e[j] - a).abs()).sum();
            100.0 * total / n as f64 / range
        });
        forces.push(ForceMetric { site: j, range_n: range, mean_error_pct: err });
    }
    let loaded: Vec<f64> = forces.iter().filter_map(|f| f.mean_error_pct).collect();
    let force_error_pct = (!loaded.is_empty()).then(|| loaded.iter().sum::<f64>() / loaded.len() as f64);

    let total_s: f64 = recon.frame_seconds.iter().sum();
    let runtime = RuntimeStats {
        total_s,
        mean_frame_ms: if n > 0 { 1e3 * total_s / n as f64 } else { 0.0 },
        max_frame_ms: 1e3 * recon.frame_seconds.iter().copied().fold(0.0, f64::max),
    };
    Ok(MetricsReport {
        scenario: scenario.name.clone(),
        input: input.to_string(),
        frames: n,
        tip_error_pct: markers.last().and_then(|m| m.mean_error_pct).unwrap_or(0.0),
        markers,
        excluded_markers: excluded.iter().enumerate().filter(|(_, &e)| e).map(|(i, _)| i).collect(),
        mean_marker_error_pct: mean_marker,
        sensor_end_error_pct: end.mean().unwrap_or(0.0),
        forces,
        force_error_pct,
        runtime,
    })
}

/// Reconstructs a recording from exact shapes (`regressor = None`) or learned
/// sensing and scores it against the ground truth.
pub fn reconstruct_and_score(
    rec: &Recording,
    regressor: Option<&Regressor>,
    scenario: &Scenario,
) -> Result<(MetricsReport, Reconstruction), CliError> {
    let recon = reconstruct(scenario, rec, regressor)?;
    let input = if regressor.is_some() { "learned" } else { "exact" };
    Ok((score(scenario, rec, &recon, input)?, recon))
}

/// Reference data for calibration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepFile {
    pub levels: Vec<SweepLevel>,
    pub traces: Vec<ForceTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub scenario: String,
    pub young_modulus_pa: f64,
    pub scaling_factor: f64,
    pub modulus: CalibrationResult,
    pub scaling: CalibrationResult,
}

fn with_modulus(device: &Device, young_modulus: f64) -> Result<Device, CliError> {
    let m = Material { young_modulus, ..*device.model.body().material() };
    Ok(device.with_material(m)?)
}

/// Validation trace from a device whose modulus and pressure are both off by
/// the reference scaling factor relative to `model_modulus`.
fn validation_trace(scenario: &Scenario, device: &Device, model_modulus: f64, seed: u64) -> Result<ForceTrace, CliError> {
    let spec = scenario.calibration.as_ref().expect("checked by caller");
    let s = spec.reference_scaling;
    let mut truth = with_modulus(device, s * model_modulus)?;
    let mut trace = ForceTrace::default();
    for (k, e) in spec.validation.sample(device.force_rows(), scenario.frame_rate_hz, seed).into_iter().enumerate() {
        let applied = truth.efforts(s * e.pressure_kpa, &e.force_n).map_err(at_frame(k))?;
        truth.model.solve_forward(&applied).map_err(at_frame(k))?;
        trace.pressure_kpa.push(e.pressure_kpa);
        trace.shapes.push(truth.shape().map_err(at_frame(k))?);
        trace.forces_n.push(e.force_n);
    }
    Ok(trace)
}

/// Identifies the modulus from the sweep, then the scaling factor from the
/// validation traces on a device using the identified modulus. Without a
/// sweep file the references are synthesized from the scenario's reference
/// modulus and scaling factor.
pub fn calibrate(scenario: &Scenario, sweep: Option<SweepFile>, seed: u64) -> Result<(CalibrationReport, SweepFile), CliError> {
    let spec = scenario.calibration.as_ref().ok_or_else(|| CliError::Config("scenario has no calibration section".into()))?;
    let device = scenario.build_device()?;
    let interval = (spec.modulus_interval_mpa[0] * 1e6, spec.modulus_interval_mpa[1] * 1e6);
    let given = sweep.is_some();
    let mut file = match sweep {
        Some(f) => f,
        None => {
            let truth = with_modulus(&device, spec.reference_modulus_mpa * 1e6)?;
            SweepFile { levels: pressure_sweep(&truth, &spec.sweep_pressures_kpa)?, traces: Vec::new() }
        }
    };
    let modulus = calibration::identify_young_modulus(&device, &file.levels, interval)?;
    let fitted = with_modulus(&device, modulus.young_modulus)?;
    if !given {
        file.traces = vec![validation_trace(scenario, &device, modulus.young_modulus, seed)?];
    }
    let scaling = calibration::calibrate_scaling_factor(&fitted, &file.traces, (spec.scaling_interval[0], spec.scaling_interval[1]))?;
    let report = CalibrationReport {
        scenario: scenario.name.clone(),
        young_modulus_pa: modulus.young_modulus,
        scaling_factor: scaling.scaling_factor,
        modulus,
        scaling,
    };
    Ok((report, file))
}
