use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty catalog")]
    EmptyCatalog,

    #[error("row {row}: {message}")]
    MalformedRow { row: usize, message: String },

    #[error("row {row}: event (t={t}, x={x}, y={y}) lies outside the observation domain")]
    OutsideDomain { row: usize, t: f64, x: f64, y: f64 },

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid parameter `{name}`: {message}")]
    InvalidParameter { name: String, message: String },

    #[error("triggering function is not integrable: {0}")]
    NonIntegrable(String),

    #[error("conditional intensity is zero at event {index}")]
    ZeroIntensity { index: usize },

    #[error("cubature did not reach tolerance {requested:e} (estimated error {achieved:e})")]
    CubatureTolerance { requested: f64, achieved: f64 },

    #[error("branching ratio {m} is not subcritical (must be < 1)")]
    Supercritical { m: f64 },

    #[error("information matrix is singular; null direction {direction:?}")]
    SingularInformation { direction: Vec<f64> },

    #[error("{failures} of {total} bootstrap replicates failed to converge")]
    BootstrapFailures { failures: usize, total: usize },

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("did not converge: {0}")]
    NonConvergence(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of a numerical procedure on valid input, as opposed
    /// to rejected input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::ZeroIntensity { .. }
                | Error::CubatureTolerance { .. }
                | Error::SingularInformation { .. }
                | Error::BootstrapFailures { .. }
                | Error::NonConvergence(_)
                | Error::Degenerate(_)
        )
    }

    pub(crate) fn param(name: &str, message: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
