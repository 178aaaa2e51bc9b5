//! Scenario configuration: device, sensor, load schedule, training and
//! calibration settings. Units are carried in key names.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use softprop_core::devices::{Device, DeviceSpec};
use softprop_core::sensor::{Preset, SensorLayout, TrainOptions};
use softprop_core::{Error, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    pub name: String,
    pub device: DeviceSpec,
    #[serde(default)]
    pub sensor: SensorSpec,
    /// Box on every estimated force (N).
    #[serde(default = "default_force_bounds")]
    pub force_bounds_n: [f64; 2],
    #[serde(default = "default_frame_rate")]
    pub frame_rate_hz: f64,
    #[serde(default)]
    pub seed: u64,
    /// Loads of the recording scored by `estimate`.
    pub schedule: Schedule,
    pub training: TrainingSpec,
    #[serde(default)]
    pub calibration: Option<CalibrationSpec>,
}

fn default_force_bounds() -> [f64; 2] {
    let b = softprop_core::model::DEFAULT_FORCE_BOUND;
    [-b, b]
}

fn default_frame_rate() -> f64 {
    30.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorSpec {
    pub base_ohm: f64,
    pub gain_ohm_per_rad: f64,
    pub coupling: f64,
    pub noise_ohm: f64,
}

impl Default for SensorSpec {
    fn default() -> Self {
        use softprop_core::sensor::{DEFAULT_BASE_OHM, DEFAULT_COUPLING, DEFAULT_GAIN_OHM, DEFAULT_NOISE_OHM};
        Self { base_ohm: DEFAULT_BASE_OHM, gain_ohm_per_rad: DEFAULT_GAIN_OHM, coupling: DEFAULT_COUPLING, noise_ohm: DEFAULT_NOISE_OHM }
    }
}

impl SensorSpec {
    pub fn apply(&self, layout: &SensorLayout) -> SensorLayout {
        SensorLayout {
            tap_arcs_mm: layout.tap_arcs_mm.clone(),
            base_resistance_ohm: vec![self.base_ohm; layout.segment_count()],
            curvature_gain_ohm: self.gain_ohm_per_rad,
            coupling: self.coupling,
            noise_std_ohm: self.noise_ohm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Keyframe {
    pub time_s: f64,
    #[serde(default)]
    pub pressure_kpa: f64,
    pub force_n: Vec<f64>,
}

/// Efforts over time. Keyframes are interpolated linearly and held outside
/// their span; before the first keyframe the device is at rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Schedule {
    Keyframes {
        duration_s: f64,
        keyframes: Vec<Keyframe>,
    },
    /// Random keyframes every `interval_s`; each force site is active with
    /// probability `active_probability` and draws uniformly from `force_n`.
    Random {
        duration_s: f64,
        interval_s: f64,
        pressure_kpa: [f64; 2],
        force_n: [f64; 2],
        active_probability: f64,
    },
}

/// One sampled frame of a schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct Efforts {
    pub time_s: f64,
    pub pressure_kpa: f64,
    pub force_n: Vec<f64>,
}

impl Schedule {
    pub fn duration(&self) -> f64 {
        match self {
            Schedule::Keyframes { duration_s, .. } | Schedule::Random { duration_s, .. } => *duration_s,
        }
    }

    /// Explicit keyframes; random schedules are drawn from `seed`.
    pub fn keyframes(&self, sites: usize, seed: u64) -> Vec<Keyframe> {
        match self {
            Schedule::Keyframes { keyframes, .. } => keyframes.clone(),
            Schedule::Random { duration_s, interval_s, pressure_kpa, force_n, active_probability } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut out = vec![Keyframe { time_s: 0.0, pressure_kpa: 0.0, force_n: vec![0.0; sites] }];
                let mut t = *interval_s;
                while t <= *duration_s + 1e-12 {
                    let p = pressure_kpa[0] + (pressure_kpa[1] - pressure_kpa[0]) * rng.random::<f64>();
                    let f = (0..sites)
                        .map(|_| {
                            let on = rng.random::<f64>() < *active_probability;
                            let v = force_n[0] + (force_n[1] - force_n[0]) * rng.random::<f64>();
                            if on {
                                v
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    out.push(Keyframe { time_s: t, pressure_kpa: p, force_n: f });
                    t += interval_s;
                }
                out
            }
        }
    }

    pub fn validate(&self, sites: usize, has_chamber: bool) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if !(self.duration() >= 0.0 && self.duration().is_finite()) {
            return bad("schedule duration must be non-negative".into());
        }
        match self {
            Schedule::Keyframes { keyframes, .. } => {
                for w in keyframes.windows(2) {
                    if !(w[1].time_s > w[0].time_s) {
                        return bad(format!("schedule times must increase strictly ({} then {})", w[0].time_s, w[1].time_s));
                    }
                }
                for k in keyframes {
                    if k.force_n.len() != sites {
                        return Err(Error::ShapeMismatch { expected: sites, got: k.force_n.len() });
                    }
                    if !has_chamber && k.pressure_kpa != 0.0 {
                        return bad("pressure scheduled for a device without a chamber".into());
                    }
                    if !(k.time_s.is_finite() && k.pressure_kpa.is_finite() && k.force_n.iter().all(|f| f.is_finite())) {
                        return bad("schedule values must be finite".into());
                    }
                }
            }
            Schedule::Random { interval_s, pressure_kpa, force_n, active_probability, .. } => {
                if !(*interval_s > 0.0) {
                    return bad("random schedule interval must be positive".into());
                }
                if !(pressure_kpa[0] <= pressure_kpa[1] && force_n[0] <= force_n[1]) {
                    return bad("random schedule ranges must be ordered".into());
                }
                if !has_chamber && (pressure_kpa[0] != 0.0 || pressure_kpa[1] != 0.0) {
                    return bad("pressure scheduled for a device without a chamber".into());
                }
                if !(0.0..=1.0).contains(active_probability) {
                    return bad("active probability must lie in [0, 1]".into());
                }
            }
        }
        Ok(())
    }

    /// Efforts at every frame of a recording sampled at `rate_hz`.
    pub fn sample(&self, sites: usize, rate_hz: f64, seed: u64) -> Vec<Efforts> {
        let keys = self.keyframes(sites, seed);
        let frames = (self.duration() * rate_hz + 1e-9).floor() as usize + 1;
        (0..frames)
            .map(|k| {
                let t = k as f64 / rate_hz;
                interpolate(&keys, sites, t)
            })
            .collect()
    }
}

fn interpolate(keys: &[Keyframe], sites: usize, t: f64) -> Efforts {
    let at = |k: &Keyframe| Efforts { time_s: t, pressure_kpa: k.pressure_kpa, force_n: k.force_n.clone() };
    match keys.iter().position(|k| k.time_s > t) {
        None => keys.last().map(at).unwrap_or(Efforts { time_s: t, pressure_kpa: 0.0, force_n: vec![0.0; sites] }),
        Some(0) => {
            // ramp up from rest toward the first keyframe
            let k = &keys[0];
            let w = if k.time_s > 0.0 { t / k.time_s } else { 1.0 };
            Efforts { time_s: t, pressure_kpa: w * k.pressure_kpa, force_n: k.force_n.iter().map(|f| w * f).collect() }
        }
        Some(i) => {
            let (a, b) = (&keys[i - 1], &keys[i]);
            let w = (t - a.time_s) / (b.time_s - a.time_s);
            Efforts {
                time_s: t,
                pressure_kpa: a.pressure_kpa + w * (b.pressure_kpa - a.pressure_kpa),
                force_n: a.force_n.iter().zip(&b.force_n).map(|(x, y)| x + w * (y - x)).collect(),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSpec {
    pub schedule: Schedule,
    pub epochs: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Histogram bins for resampling; 0 disables it.
    #[serde(default = "default_bins")]
    pub resample_bins: usize,
}

fn default_learning_rate() -> f64 {
    0.01
}
fn default_momentum() -> f64 {
    0.9
}
fn default_batch() -> usize {
    32
}
fn default_bins() -> usize {
    10
}

impl TrainingSpec {
    pub fn options(&self, seed: u64) -> TrainOptions {
        TrainOptions { epochs: self.epochs, learning_rate: self.learning_rate, momentum: self.momentum, batch_size: self.batch_size, seed }
    }
}

/// Search intervals and, for synthetic runs, the ground truth the reference
/// data is generated from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSpec {
    pub modulus_interval_mpa: [f64; 2],
    pub sweep_pressures_kpa: Vec<f64>,
    pub scaling_interval: [f64; 2],
    pub validation: Schedule,
    pub reference_modulus_mpa: f64,
    pub reference_scaling: f64,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("config: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::InvalidInput(format!("unsupported config version {} (expected {CONFIG_VERSION})", self.version)));
        }
        if !(self.frame_rate_hz > 0.0 && self.frame_rate_hz.is_finite()) {
            return Err(Error::InvalidInput("frame rate must be positive".into()));
        }
        let device = self.build_device()?;
        let sites = device.force_rows();
        let chamber = device.pressure_rows() == 1;
        self.schedule.validate(sites, chamber)?;
        self.training.schedule.validate(sites, chamber)?;
        if self.training.epochs == 0 {
            return Err(Error::InvalidInput("training needs at least one epoch".into()));
        }
        if let Some(c) = &self.calibration {
            c.validation.validate(sites, chamber)?;
            if !(c.modulus_interval_mpa[0] > 0.0 && c.modulus_interval_mpa[0] < c.modulus_interval_mpa[1]) {
                return Err(Error::InvalidInput("modulus interval must be positive and ordered".into()));
            }
            if !(c.scaling_interval[0] > 0.0 && c.scaling_interval[0] < c.scaling_interval[1]) {
                return Err(Error::InvalidInput("scaling interval must be positive and ordered".into()));
            }
            if !(c.reference_modulus_mpa > 0.0 && c.reference_scaling > 0.0) {
                return Err(Error::InvalidInput("calibration references must be positive".into()));
            }
        }
        Ok(())
    }

    /// Device with the sensor characteristics of this scenario.
    pub fn build_device(&self) -> Result<Device> {
        let mut d = self.device.build()?;
        d.layout = self.sensor.apply(&d.layout);
        d.layout.validate()?;
        let [lo, hi] = self.force_bounds_n;
        d.model.set_force_bounds(vec![(lo, hi); d.force_rows()])?;
        Ok(d)
    }

    pub fn preset(&self) -> Preset {
        match self.device {
            DeviceSpec::Strip(_) => Preset::Strip,
            DeviceSpec::Finger(_) => Preset::Finger,
        }
    }

    /// SHA-256 of the canonical config together with the effective seed.
    pub fn hash(&self, seed: u64) -> String {
        let canonical = serde_json::to_string(self).expect("scenario serializes");
        let mut h = Sha256::new();
        h.update(canonical.as_bytes());
        h.update(seed.to_le_bytes());
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> Schedule {
        Schedule::Keyframes {
            duration_s: 2.0,
            keyframes: vec![
                Keyframe { time_s: 1.0, pressure_kpa: 1.0, force_n: vec![2.0] },
                Keyframe { time_s: 1.5, pressure_kpa: 1.0, force_n: vec![4.0] },
            ],
        }
    }

    #[test]
    fn sampling_interpolates_and_holds() {
        let f = ramp().sample(1, 4.0, 0);
        assert_eq!(f.len(), 9);
        assert_eq!(f[0].force_n, vec![0.0]);
        assert!((f[2].force_n[0] - 1.0).abs() < 1e-12);
        assert!((f[5].force_n[0] - 3.0).abs() < 1e-12);
        assert_eq!(f[8].force_n, vec![4.0]);
        assert_eq!(f[8].pressure_kpa, 1.0);
    }

    #[test]
    fn empty_schedule_is_rest() {
        let s = Schedule::Keyframes { duration_s: 1.0, keyframes: vec![] };
        let f = s.sample(2, 10.0, 0);
        assert_eq!(f.len(), 11);
        assert!(f.iter().all(|e| e.pressure_kpa == 0.0 && e.force_n == vec![0.0, 0.0]));
    }

    #[test]
    fn schedule_checks() {
        let back = Schedule::Keyframes {
            duration_s: 1.0,
            keyframes: vec![
                Keyframe { time_s: 0.5, pressure_kpa: 0.0, force_n: vec![0.0] },
                Keyframe { time_s: 0.5, pressure_kpa: 0.0, force_n: vec![1.0] },
            ],
        };
        assert!(back.validate(1, false).is_err());
        assert!(ramp().validate(1, false).is_err());
        assert!(ramp().validate(1, true).is_ok());
        assert!(ramp().validate(2, true).is_err());
    }

    #[test]
    fn random_schedule_is_seeded() {
        let s = Schedule::Random { duration_s: 3.0, interval_s: 0.5, pressure_kpa: [0.0, 1.0], force_n: [0.0, 5.0], active_probability: 0.5 };
        assert_eq!(s.keyframes(2, 4), s.keyframes(2, 4));
        assert_ne!(s.keyframes(2, 4), s.keyframes(2, 5));
        assert_eq!(s.keyframes(2, 4).len(), 7);
    }
}
