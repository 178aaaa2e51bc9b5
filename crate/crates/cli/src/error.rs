use std::fmt;
use std::path::PathBuf;

use softprop_core::Error;

/// Failure of a subcommand. Exit code 1 covers bad input of any kind, 2 covers
/// numerical failures.
#[derive(Debug)]
pub enum CliError {
    Core { error: Error, frame: Option<usize> },
    Config(String),
    Io { path: PathBuf, message: String },
    Format { path: PathBuf, message: String },
}

impl From<Error> for CliError {
    fn from(error: Error) -> Self {
        CliError::Core { error, frame: None }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core { error, .. } if error.is_solver_failure() => 2,
            _ => 1,
        }
    }

    /// Stable snake_case identifier of the failure kind.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core { error, .. } => match error {
                Error::PointOutsideMesh { .. } => "point_outside_mesh",
                Error::DegenerateElement { .. } => "degenerate_element",
                Error::DegenerateSegment { .. } => "degenerate_segment",
                Error::NonConvergence { .. } => "non_convergence",
                Error::SingularSystem(_) => "singular_system",
                Error::InvalidMesh(_) => "invalid_mesh",
                Error::InvalidInput(_) => "invalid_input",
                Error::ShapeMismatch { .. } => "shape_mismatch",
                Error::Diverged { .. } => "diverged",
                Error::NoMinimumInInterval { .. } => "no_minimum_in_interval",
            },
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Format { .. } => "format",
        }
    }

    /// One JSON line for standard error.
    pub fn to_json(&self) -> String {
        let frame = match self {
            CliError::Core { frame, .. } => *frame,
            _ => None,
        };
        serde_json::json!({
            "error": { "code": self.exit_code(), "kind": self.kind(), "frame": frame, "message": self.to_string() }
        })
        .to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core { error, frame: Some(k) } => write!(f, "frame {k}: {error}"),
            CliError::Core { error, frame: None } => write!(f, "{error}"),
            CliError::Config(m) => write!(f, "config: {m}"),
            CliError::Io { path, message } => write!(f, "{}: {message}", path.display()),
            CliError::Format { path, message } => write!(f, "{}: {message}", path.display()),
        }
    }
}

impl std::error::Error for CliError {}
