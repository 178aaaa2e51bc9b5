//! Synthetic multi-tap resistive sensing and the learned resistance-to-shape map.

mod dataset;
mod network;
mod resistance;

pub use dataset::{bin_indices, build_dataset, resample_dataset, Dataset, Sample, SensorRecording, ShapeMode, ShapeVector, Split, SplitFractions};
pub use network::{predict_shape, train_regressor, train_with_layers, Activation, Layer, LayerSpec, Preset, Regressor, TrainOptions, TrainReport};
pub use resistance::{
    circumscribed_curvature, curvature_of_points, curvature_profile, simulate_resistance, CurvatureProfile, ResistanceVector, SensorLayout,
    DEFAULT_BASE_OHM, DEFAULT_COUPLING, DEFAULT_GAIN_OHM, DEFAULT_NOISE_OHM,
};
