use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("degenerate triangle (signed area {area:e})")]
    SingularElement { area: f64 },

    #[error("mesh has no interior vertices, the discrete problem is empty")]
    EmptyProblem,

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("basis is rank deficient: {0}")]
    RankDeficient(String),

    #[error("eigensolver did not converge in {iterations} restarts, residuals {residuals:?}")]
    NoConvergence {
        iterations: usize,
        residuals: Vec<f64>,
    },

    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),

    #[error("no tabulated projection constant for h = {h}; supply one with --ch-source file:PATH")]
    MissingConstant { h: f64 },

    #[error("invalid enclosure table: {0}")]
    InvalidEnclosure(String),

    #[error("enclosure table is empty")]
    EmptyTable,

    #[error("index {index} out of range ({available} available)")]
    IndexOutOfRange { index: usize, available: usize },

    #[error("bound not applicable: {0}")]
    NotApplicable(String),

    #[error("inadmissible rho = {rho} for cluster starting at {first}: need rho > lambda_n^hi = {lambda_n_hi}")]
    InadmissibleRho {
        rho: f64,
        first: usize,
        lambda_n_hi: f64,
    },

    #[error("quadrature rule of degree {degree} is below the required {required}")]
    QuadratureTooCoarse { degree: usize, required: usize },

    #[error("inconsistent cross-Gram: singular value {sigma} exceeds 1")]
    GramInconsistency { sigma: f64 },

    #[error("meshes are not nested: {0}")]
    NotNested(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
