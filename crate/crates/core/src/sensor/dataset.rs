use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeMode {
    /// In-plane rotation per nominal point (rad).
    Orientation,
    /// Displacement per nominal point (mm).
    Position,
}

impl ShapeMode {
    pub fn width(self) -> usize {
        match self {
            ShapeMode::Orientation => 1,
            ShapeMode::Position => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeVector {
    pub mode: ShapeMode,
    pub entries: Vec<f64>,
}

impl ShapeVector {
    pub fn new(mode: ShapeMode, points: usize, entries: Vec<f64>) -> Result<Self> {
        let expected = points * mode.width();
        if entries.len() != expected {
            return Err(Error::ShapeMismatch { expected, got: entries.len() });
        }
        Ok(Self { mode, entries })
    }

    pub fn points(&self) -> usize {
        self.entries.len() / self.mode.width()
    }
}

/// Per-frame sensor readings and the matching shape, sampled at a fixed rate.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SensorRecording {
    pub resistances: Vec<Vec<f64>>,
    /// Shape relative to the rest configuration.
    pub shapes: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `window` consecutive resistance vectors, oldest first, flattened.
    pub input: Vec<f64>,
    pub target: Vec<f64>,
    pub split: Split,
    pub recording: usize,
    /// Frame index of the newest reading in the window.
    pub frame: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub mode: ShapeMode,
    pub window: usize,
    /// Resistance values per frame.
    pub segments: usize,
    pub target_width: usize,
    pub samples: Vec<Sample>,
}

/// Split assignment repeats in blocks of this many samples.
pub const SPLIT_BLOCK: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { train: 0.7, validation: 0.15 }
    }
}

impl SplitFractions {
    fn assign(&self, index: usize) -> Split {
        let pos = (index % SPLIT_BLOCK) as f64 / SPLIT_BLOCK as f64;
        if pos < self.train {
            Split::Train
        } else if pos < self.train + self.validation {
            Split::Validation
        } else {
            Split::Test
        }
    }
}

impl Dataset {
    pub fn input_width(&self) -> usize {
        self.window * self.segments
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }
}

/// Pairs every run of `window` consecutive frames with the shape at its newest
/// frame. Windows never span two recordings.
pub fn build_dataset(recordings: &[SensorRecording], mode: ShapeMode, window: usize, fractions: SplitFractions) -> Result<Dataset> {
    if window == 0 {
        return Err(Error::InvalidInput("window must be at least 1".into()));
    }
    let first =
        recordings.iter().find(|r| !r.resistances.is_empty()).ok_or_else(|| Error::InvalidInput("no frames to build a dataset from".into()))?;
    let segments = first.resistances[0].len();
    let target_width = first.shapes[0].len();
    if target_width % mode.width() != 0 {
        return Err(Error::InvalidInput(format!("shape width {target_width} does not fit {mode:?} mode")));
    }
    let mut samples = Vec::new();
    for (ri, rec) in recordings.iter().enumerate() {
        if rec.resistances.len() != rec.shapes.len() {
            return Err(Error::ShapeMismatch { expected: rec.resistances.len(), got: rec.shapes.len() });
        }
        if let Some(bad) = rec.resistances.iter().find(|r| r.len() != segments) {
            return Err(Error::ShapeMismatch { expected: segments, got: bad.len() });
        }
        if let Some(bad) = rec.shapes.iter().find(|s| s.len() != target_width) {
            return Err(Error::ShapeMismatch { expected: target_width, got: bad.len() });
        }
        for end in window.saturating_sub(1)..rec.resistances.len() {
            let input = rec.resistances[end + 1 - window..=end].concat();
            let index = samples.len();
            samples.push(Sample { input, target: rec.shapes[end].clone(), split: fractions.assign(index), recording: ri, frame: end });
        }
    }
    Ok(Dataset { mode, window, segments, target_width, samples })
}

fn magnitude(s: &Sample) -> f64 {
    s.target.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Histogram index of each value over `bins` equal-width bins spanning the data.
pub fn bin_indices(values: &[f64], bins: usize) -> Vec<usize> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    values.iter().map(|&v| if width > 0.0 { (((v - lo) / width) as usize).min(bins - 1) } else { 0 }).collect()
}

/// Equalizes the training split over target magnitude: each draw picks an
/// occupied bin uniformly, then a sample within it. Validation and test
/// samples are kept as they are; the size of every split is unchanged.
pub fn resample_dataset(d: &Dataset, bins: usize, seed: u64) -> Result<Dataset> {
    if bins < 2 {
        return Err(Error::InvalidInput("resampling needs at least 2 bins".into()));
    }
    let train: Vec<&Sample> = d.split(Split::Train).collect();
    let mut out = Dataset { samples: Vec::with_capacity(d.samples.len()), ..d.clone() };
    if !train.is_empty() {
        let mags: Vec<f64> = train.iter().map(|s| magnitude(s)).collect();
        let idx = bin_indices(&mags, bins);
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); bins];
        for (i, &b) in idx.iter().enumerate() {
            members[b].push(i);
        }
        let occupied: Vec<&Vec<usize>> = members.iter().filter(|m| !m.is_empty()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..train.len() {
            let bin = occupied[rng.random_range(0..occupied.len())];
            out.samples.push(train[bin[rng.random_range(0..bin.len())]].clone());
        }
    }
    out.samples.extend(d.samples.iter().filter(|s| s.split != Split::Train).cloned());
    Ok(out)
}
