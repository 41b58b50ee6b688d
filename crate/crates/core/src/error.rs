use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no ramp: radius profile is constant")]
    NoRamp,

    #[error("invalid damping: quality factor {0} is not positive")]
    InvalidDamping(f64),

    #[error("overdamped unsupported: quality factor {0} <= 1/2")]
    OverdampedUnsupported(f64),

    #[error("stiff failure: step size underflow at t = {t} ms")]
    StiffFailure { t: f64 },

    #[error("insufficient data: {found} samples in window, need at least {needed}")]
    InsufficientData { found: usize, needed: usize },

    #[error("overparameterized: {residuals} residuals for {parameters} free parameters")]
    Overparameterized { residuals: usize, parameters: usize },

    #[error("duplicate trace identifier `{0}`")]
    DuplicateTrace(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error in {what}: {message}")]
    Parse { what: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::InvalidDamping(_)
                | Error::OverdampedUnsupported(_)
                | Error::StiffFailure { .. }
                | Error::InsufficientData { .. }
                | Error::Overparameterized { .. }
                | Error::NoRamp
        )
    }
}
