use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not Hermitian (max deviation {deviation:.3e})")]
    NonHermitian { deviation: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("unsupported labeling: {0}")]
    UnsupportedLabeling(String),

    #[error("ambiguous labeling: state {level} has maximal product-state weight {weight:.3}")]
    AmbiguousLabeling { level: usize, weight: f64 },

    #[error("level sets were computed at different fields")]
    MismatchedFields,

    #[error("grid too coarse: step {step:.4e} GHz exceeds fwhm/8 = {limit:.4e} GHz")]
    GridTooCoarse { step: f64, limit: f64 },

    #[error("grid [{start}, {stop}] GHz does not cover line at {center} GHz +/- 3 FWHM")]
    GridTooNarrow { start: f64, stop: f64, center: f64 },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("fit did not converge after {iterations} iterations (residual norm {residual_norm:.6e}): {reason}")]
    NotConverged {
        iterations: usize,
        residual_norm: f64,
        reason: String,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

pub type Result<T> = std::result::Result<T, Error>;
