use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure{}: {message}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NumericalFailure {
        step: Option<usize>,
        message: String,
    },

    #[error("time average did not settle after {doublings} horizon doublings (worst component {component}, last change {change:e})")]
    NonAveraging {
        component: usize,
        doublings: usize,
        change: f64,
    },

    #[error(
        "ellipticity violated: averaged diffusion eigenvalue {eigenvalue:e} is below {floor:e}"
    )]
    EllipticityViolation { eigenvalue: f64, floor: f64 },

    #[error("invalid configuration: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn numerical(step: Option<usize>, message: impl Into<String>) -> Self {
        Error::NumericalFailure {
            step,
            message: message.into(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }

    /// Process exit code used by the command line front end:
    /// 2 for anything the caller got wrong, 3 for numerical trouble.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Validation(_) | Error::Json(_) | Error::Io(_) => 2,
            Error::NumericalFailure { .. }
            | Error::NonAveraging { .. }
            | Error::EllipticityViolation { .. } => 3,
        }
    }
}
