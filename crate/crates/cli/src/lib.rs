//! Scenario-driven pipelines around `softprop-core`: synthetic recordings,
//! regressor training, force and shape reconstruction, scoring and
//! calibration, plus the file formats the `softprop` binary reads and writes.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod io;
pub mod pipeline;
pub mod scenario;

pub use error::CliError;
pub use pipeline::{reconstruct_and_score, run_forward, MetricsReport, Recording};
pub use scenario::Scenario;
