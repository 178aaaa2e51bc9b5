//! Model-based proprioception for planar soft bodies.
//!
//! The crate forward-simulates soft structures with corotational constant
//! strain triangles under force, pressure and inextensibility constraints,
//! synthesizes multi-tap resistive sensor readings, learns the mapping from
//! resistances to shape, and inverts the mechanics with a box-constrained
//! quadratic program to recover external forces and the full shape.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod calibration;
pub mod constraints;
pub mod devices;
pub mod error;
pub mod fem;
pub mod geometry;
pub mod inverse;
pub mod linalg;
pub mod model;
pub mod sensor;

pub use calibration::{calibrate_scaling_factor, identify_young_modulus, CalibrationResult, ForceTrace, SweepLevel};
pub use constraints::{ConstraintSet, EffectorKind, ForceConstraint, LengthConstraint, PoseEffector, PressureConstraint};
pub use devices::{Device, DeviceKind, DeviceSpec, FingerSpec, MaterialSpec, StripSpec};
pub use error::{Error, Result};
pub use fem::{quasi_static_step, ElasticBody, Material, StepOptions, StepReport, SystemState};
pub use geometry::{BarycentricAnchor, Centerline, Point2, TriMesh};
pub use inverse::{solve_qp, QpProblem, QpSolution};
pub use model::{Estimate, EstimateOptions, SoftBody};
pub use sensor::{simulate_resistance, Dataset, Preset, Regressor, ShapeMode, ShapeVector};
