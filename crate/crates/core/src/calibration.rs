//! Scalar parameter identification: Young's modulus from a pressure sweep and
//! the joint modulus/pressure scaling factor from force traces.

use serde::{Deserialize, Serialize};

use crate::devices::{Device, KPA_TO_N_PER_MM2};
use crate::error::{Error, Result};
use crate::geometry::Point2;

/// Golden-section stopping width, relative to the search interval.
pub const DEFAULT_TOLERANCE: f64 = 0.005;
/// Objectives whose spread over all evaluations stays below this (relative)
/// carry no information about the parameter.
pub const FLAT_TOLERANCE: f64 = 1e-8;
const POLISH_STEPS: usize = 8;
const INV_PHI: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    /// Pa.
    pub young_modulus: f64,
    pub scaling_factor: f64,
    pub residual: f64,
    /// Every evaluation as (parameter, objective), in order.
    pub trace: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineSearch {
    pub argmin: f64,
    pub value: f64,
    pub trace: Vec<(f64, f64)>,
    /// Bracket after each golden-section reduction.
    pub brackets: Vec<(f64, f64)>,
}

/// Golden-section search for the minimum of `f` over `interval`, followed by
/// a few line-intersection steps that sharpen V-shaped minima (as produced by
/// mean absolute error objectives). Ties go to the left point.
///
/// Fails with `NoMinimumInInterval` when the best evaluation is an endpoint
/// or the objective is flat.
pub fn golden_section<F>(interval: (f64, f64), tolerance: f64, mut f: F) -> Result<LineSearch>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (lo, hi) = interval;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidInput(format!("search interval [{lo}, {hi}] is empty")));
    }
    if !(tolerance > 0.0 && tolerance < 1.0) {
        return Err(Error::InvalidInput(format!("tolerance must lie in (0, 1), got {tolerance}")));
    }
    let mut trace = Vec::new();
    let mut eval = |x: f64, trace: &mut Vec<(f64, f64)>| -> Result<f64> {
        let v = f(x)?;
        if !v.is_finite() {
            return Err(Error::InvalidInput(format!("objective is not finite at {x}")));
        }
        trace.push((x, v));
        Ok(v)
    };
    eval(lo, &mut trace)?;
    eval(hi, &mut trace)?;

    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = eval(c, &mut trace)?;
    let mut fd = eval(d, &mut trace)?;
    let mut brackets = vec![(a, b)];
    while b - a > tolerance * (hi - lo) {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = eval(c, &mut trace)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = eval(d, &mut trace)?;
        }
        brackets.push((a, b));
    }

    let spread = |t: &[(f64, f64)]| {
        let min = t.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let max = t.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        (min, max)
    };
    let (min, max) = spread(&trace);
    if max - min <= FLAT_TOLERANCE * (1.0 + max.abs()) {
        return Err(Error::NoMinimumInInterval { endpoint: lo });
    }
    if let Some((x, _)) = best(&trace).filter(|&(x, _)| x == lo || x == hi) {
        return Err(Error::NoMinimumInInterval { endpoint: x });
    }

    for _ in 0..POLISH_STEPS {
        let Some(x) = v_intersection(&trace) else { break };
        let (bx, _) = best(&trace).expect("non-empty trace");
        if (x - bx).abs() <= 1e-12 * (hi - lo) || trace.iter().any(|p| p.0 == x) {
            break;
        }
        eval(x, &mut trace)?;
    }
    let (argmin, value) = best(&trace).expect("non-empty trace");
    Ok(LineSearch { argmin, value, trace, brackets })
}

fn best(trace: &[(f64, f64)]) -> Option<(f64, f64)> {
    trace.iter().copied().fold(None, |acc, p| match acc {
        Some(b) if b.1 <= p.1 => Some(b),
        _ => Some(p),
    })
}

/// Minimum of two lines of opposite slope fitted to the best point and its
/// neighbours, on whichever side of the best point the data supports.
fn v_intersection(trace: &[(f64, f64)]) -> Option<f64> {
    let mut pts = trace.to_vec();
    pts.sort_by(|p, q| p.0.total_cmp(&q.0));
    pts.dedup_by(|p, q| p.0 == q.0);
    let i = pts.iter().enumerate().min_by(|a, b| a.1 .1.total_cmp(&b.1 .1)).map(|(i, _)| i)?;
    if i == 0 || i + 1 == pts.len() {
        return None;
    }
    let ((xl, fl), (xm, fm), (xr, fr)) = (pts[i - 1], pts[i], pts[i + 1]);
    let mut candidates = Vec::new();
    let cl = (fl - fm) / (xm - xl);
    if cl > 0.0 {
        let x = (fm - fr + cl * (xm + xr)) / (2.0 * cl);
        if x > xm && x < xr {
            candidates.push((x, fm - cl * (x - xm)));
        }
    }
    let cr = (fr - fm) / (xr - xm);
    if cr > 0.0 {
        let x = (fl - fm + cr * (xl + xm)) / (2.0 * cr);
        if x > xl && x < xm {
            candidates.push((x, fm + cr * (x - xm)));
        }
    }
    best(&candidates.iter().map(|&(x, v)| (x, v)).collect::<Vec<_>>()).map(|(x, _)| x)
}

/// Reference marker positions at one pressure, with no external force.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepLevel {
    pub pressure_kpa: f64,
    pub markers: Vec<Point2>,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

/// Recorded shapes with the forces that produced them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ForceTrace {
    pub pressure_kpa: Vec<f64>,
    /// Shape vector per frame, relative to rest.
    pub shapes: Vec<Vec<f64>>,
    /// Measured force per frame and site (N).
    pub forces_n: Vec<Vec<f64>>,
}

/// Marker positions after loading the device through `pressures_kpa` in order.
pub fn pressure_sweep(device: &Device, pressures_kpa: &[f64]) -> Result<Vec<SweepLevel>> {
    let mut d = device.clone();
    d.reset();
    let zeros = vec![0.0; d.force_rows()];
    pressures_kpa
        .iter()
        .map(|&p| {
            d.model.solve_forward(&d.efforts(p, &zeros)?)?;
            Ok(SweepLevel { pressure_kpa: p, markers: d.marker_positions(), weight: 1.0 })
        })
        .collect()
}

/// Weighted mean marker distance over the sweep for a device built with
/// modulus `young_modulus` (Pa).
pub fn sweep_objective(device: &Device, sweep: &[SweepLevel], young_modulus: f64) -> Result<f64> {
    let material = crate::fem::Material { young_modulus, ..*device.model.body().material() };
    let mut d = device.with_material(material)?;
    let zeros = vec![0.0; d.force_rows()];
    let mut total = 0.0;
    for level in sweep {
        d.model.solve_forward(&d.efforts(level.pressure_kpa, &zeros)?)?;
        let got = d.marker_positions();
        if got.len() != level.markers.len() {
            return Err(Error::ShapeMismatch { expected: got.len(), got: level.markers.len() });
        }
        let mean = got.iter().zip(&level.markers).map(|(a, b)| a.distance(*b)).sum::<f64>() / got.len() as f64;
        total += level.weight * mean;
    }
    Ok(total / sweep.len() as f64)
}

/// Fits Young's modulus (Pa) so the device reproduces reference marker
/// positions over a pressure sweep.
pub fn identify_young_modulus(device: &Device, sweep: &[SweepLevel], interval: (f64, f64)) -> Result<CalibrationResult> {
    if sweep.len() < 3 {
        return Err(Error::InvalidInput(format!("need at least 3 pressure levels, got {}", sweep.len())));
    }
    if !(interval.0 > 0.0) {
        return Err(Error::InvalidInput("modulus interval must be positive".into()));
    }
    if sweep.iter().any(|l| !(l.weight > 0.0 && l.weight.is_finite())) {
        return Err(Error::InvalidInput("sweep weights must be positive".into()));
    }
    let search = golden_section(interval, DEFAULT_TOLERANCE, |e| sweep_objective(device, sweep, e))?;
    Ok(CalibrationResult { young_modulus: search.argmin, scaling_factor: 1.0, residual: search.value, trace: search.trace })
}

/// Replays recorded shapes through the estimator on a device whose modulus and
/// pressures are both multiplied by `scale`; returns the mean absolute force
/// error.
pub fn force_objective(device: &Device, traces: &[ForceTrace], scale: f64) -> Result<f64> {
    let base = *device.model.body().material();
    let material = crate::fem::Material { young_modulus: base.young_modulus * scale, ..base };
    let template = device.with_material(material)?;
    let offset = template.pressure_rows();
    let (mut total, mut count) = (0.0, 0usize);
    for trace in traces {
        let mut d = template.clone();
        let mut prev_shape = vec![0.0; d.model.effector_width()];
        let mut prev_p = 0.0;
        for ((shape, &p), measured) in trace.shapes.iter().zip(&trace.pressure_kpa).zip(&trace.forces_n) {
            if shape.len() != prev_shape.len() {
                return Err(Error::ShapeMismatch { expected: prev_shape.len(), got: shape.len() });
            }
            if measured.len() != d.force_rows() {
                return Err(Error::ShapeMismatch { expected: d.force_rows(), got: measured.len() });
            }
            let delta: Vec<f64> = shape.iter().zip(&prev_shape).map(|(a, b)| a - b).collect();
            let dp = (offset == 1).then_some(scale * (p - prev_p) * KPA_TO_N_PER_MM2);
            d.model.estimate_step(&delta, dp)?;
            let est = &d.model.applied_efforts()[offset..];
            total += est.iter().zip(measured).map(|(e, m)| (e - m).abs()).sum::<f64>();
            count += measured.len();
            prev_shape.clone_from(shape);
            prev_p = p;
        }
    }
    Ok(total / count as f64)
}

/// Fits the factor that scales Young's modulus and actuation pressure together
/// so estimated forces best match the measured ones.
pub fn calibrate_scaling_factor(device: &Device, traces: &[ForceTrace], interval: (f64, f64)) -> Result<CalibrationResult> {
    let frames: usize = traces.iter().map(|t| t.shapes.len()).sum();
    if frames == 0 {
        return Err(Error::InvalidInput("need at least one validation frame".into()));
    }
    for t in traces {
        if t.shapes.len() != t.forces_n.len() || t.shapes.len() != t.pressure_kpa.len() {
            return Err(Error::ShapeMismatch { expected: t.shapes.len(), got: t.forces_n.len().min(t.pressure_kpa.len()) });
        }
    }
    if !(interval.0 > 0.0) {
        return Err(Error::InvalidInput("scaling interval must be positive".into()));
    }
    let search = golden_section(interval, DEFAULT_TOLERANCE, |s| force_objective(device, traces, s))?;
    Ok(CalibrationResult {
        young_modulus: device.model.body().material().young_modulus,
        scaling_factor: search.argmin,
        residual: search.value,
        trace: search.trace,
    })
}
