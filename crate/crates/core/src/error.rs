use thiserror::Error;

/// Errors produced by the simulation, estimation and learning routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("point ({x}, {y}) lies outside the mesh")]
    PointOutsideMesh { x: f64, y: f64 },

    #[error("element {element} is degenerate or inverted (signed area {area:e})")]
    DegenerateElement { element: usize, area: f64 },

    #[error("segment {index} is degenerate (length {length:e})")]
    DegenerateSegment { index: usize, length: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("objective has no interior minimum; best value at endpoint {endpoint}")]
    NoMinimumInInterval { endpoint: f64 },
}

impl Error {
    /// True for failures of a numerical solver as opposed to bad input.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            Error::DegenerateElement { .. }
                | Error::DegenerateSegment { .. }
                | Error::NonConvergence { .. }
                | Error::SingularSystem(_)
                | Error::Diverged { .. }
                | Error::NoMinimumInInterval { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
