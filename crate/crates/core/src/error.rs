use thiserror::Error;

use crate::fem::SolveReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("unknown shape `{0}`")]
    UnknownShape(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("ball of radius {radius} around ({x}, {y}) contains no cells of the region")]
    EmptyRegion { x: f64, y: f64, radius: f64 },

    #[error("circulant embedding failed: {clipped_fraction:.4} of the spectral mass is negative")]
    EmbeddingFailure { clipped_fraction: f64 },

    #[error("conjugate gradients did not converge: {report:?}")]
    SolverFailure { report: SolveReport },

    #[error("effective tensor leaves the ellipticity box: {0}")]
    EllipticityViolation(String),

    #[error("insufficient data: {0}")]
    InsufficientSamples(String),

    #[error("radius {radius} exceeds the admissible limit {limit}")]
    RadiusTooLarge { radius: f64, limit: f64 },

    #[error("epsilon {0} does not tile the target grid dyadically")]
    NonDyadicEpsilon(f64),

    #[error("epsilon {epsilon} too large for a domain of diameter {diameter}")]
    EpsilonTooLarge { epsilon: f64, diameter: f64 },

    #[error("grids do not match: {0}")]
    MismatchedGrids(String),

    #[error("kernel radius {radius} is below two cells ({min})")]
    DegenerateKernel { radius: f64, min: f64 },

    #[error("test field touches the boundary layer: {0}")]
    UnsupportedTestField(String),

    #[error("non-positive value {0} in a logarithmic fit")]
    NonPositiveValue(f64),

    #[error("config error: {0}")]
    Config(String),

    #[error("run failed at {context}: {source}")]
    Task { context: String, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// Attaches the failing unit of work.
    pub fn at(self, context: impl Into<String>) -> Self {
        Error::Task {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, unwrapping task context.
    pub fn root(&self) -> &Error {
        match self {
            Error::Task { source, .. } => source.root(),
            e => e,
        }
    }
}
