use thiserror::Error;

/// Errors raised by the sampling laboratory.
#[derive(Debug, Error)]
pub enum LabError {
    /// A continuous or discrete time index outside the schedule.
    #[error("time {t} outside the schedule domain [{lo}, {hi}]")]
    Domain { t: f64, lo: f64, hi: f64 },

    /// Malformed caller input (lengths, non-finite values, unknown labels).
    #[error("invalid input: {0}")]
    Input(String),

    /// A non-finite value appeared while stepping a sampler or integrator.
    #[error("non-finite state at step {step}: {what}")]
    Numerical { step: usize, what: String },

    /// Fixed-point refinement of an inversion step failed to contract.
    #[error("inversion diverged at step {step}: residual {residual:e}")]
    Inversion { step: usize, residual: f64 },

    /// Interpolation endpoints are (nearly) collinear.
    #[error("degenerate spherical interpolation: sin(theta) = {sin_theta:e}")]
    Degenerate { sin_theta: f64 },

    /// A requested target that is geometrically unreachable.
    #[error("out of range: {0}")]
    Range(String),

    /// The operation exceeds a configured capability limit.
    #[error("capability exceeded: {0}")]
    Capability(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl LabError {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        LabError::Input(msg.into())
    }

    /// Process exit code for the command-line front end.
    ///
    /// 1 covers input and configuration problems, 2 covers numerical
    /// failures. Verify-suite failures (3) are not errors and are decided by
    /// the caller.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Numerical { .. }
            | LabError::Inversion { .. }
            | LabError::Degenerate { .. }
            | LabError::Protocol(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
