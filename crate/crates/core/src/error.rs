use thiserror::Error;

/// Errors raised by the numerical layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("transform domain violation: Re(lambda) = {re} is not above the abscissa {abscissa}")]
    DomainViolation { re: f64, abscissa: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no characteristic root found in the searchable domain: {diagnostic}")]
    AlphaNotFound { diagnostic: String },

    #[error("winding-count mismatch: box reports {expected} zeros, located {found}")]
    WindingMismatch { expected: i64, found: i64 },

    #[error("rectangle subdivision exceeded depth {0}")]
    SubdivisionDepth(usize),

    #[error("boundary of the counting box stays too close to a zero after {0} perturbations")]
    BoundaryOnZero(usize),

    #[error("contour integration failed to converge: {0}")]
    ContourNonConvergence(String),

    #[error("non-finite value encountered at t = {t}: {context}")]
    NonFinite { t: f64, context: String },

    #[error("grid/step mismatch: {0}")]
    GridMismatch(String),

    #[error("quadrature did not converge: {0}")]
    QuadratureNonConvergence(String),

    #[error("integral diverges: {0}")]
    DivergentIntegral(String),

    #[error("horizon too short: {0}")]
    HorizonTooShort(String),

    #[error("certified tail bound {bound:.3e} exceeds tolerance {tol:.3e} within reachable horizon")]
    TailUnachievable { bound: f64, tol: f64 },

    #[error("intensity condition violated: {0}")]
    IntensityViolated(String),

    #[error("expression parse error at byte {position}: {message}")]
    ExprParse { position: usize, message: String },

    #[error("unknown fixture '{0}'")]
    UnknownFixture(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
