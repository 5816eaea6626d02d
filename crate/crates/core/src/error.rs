use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("resolution error: {0}")]
    Resolution(String),
    #[error("divergence: {0}")]
    Divergence(String),
    #[error("sequence exhausted: {0}")]
    Extension(String),
    #[error("insufficient range: {0}")]
    Range(String),
    #[error("internal consistency failure: {0}")]
    Consistency(String),
    #[error("unsupported dimension {0}")]
    Dimension(i64),
    #[error("singular point: {0}")]
    Singular(String),
    #[error("contour radius too small near gluing point {0}")]
    ContourRadius(f64),
    #[error("near-singular solve: {0}")]
    NearSingular(String),
    #[error("gamma too large: contraction norm {norm:.3e} exceeds 1/2")]
    GammaTooLarge { norm: f64 },
    #[error("assumption violated: {0}")]
    Assumption(String),
    #[error("contaminated trace: {0}")]
    Contaminated(String),
    #[error("calibration failure: residual {0:.3e}")]
    Calibration(f64),
    #[error("step too small: {0}")]
    Step(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;
