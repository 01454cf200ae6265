//! Error type shared across the toolkit.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix must be square, got {rows}x{cols}")]
    NonSquare { rows: usize, cols: usize },

    #[error("determinant must be positive, got {det:.3e}; fix orientation first")]
    NonPositiveDeterminant { det: f64 },

    #[error("matrix is rank deficient (sigma_min = {sigma_min:.3e})")]
    RankDeficient { sigma_min: f64 },

    #[error("matrix is not symmetric (max asymmetry {dev:.3e})")]
    NotSymmetric { dev: f64 },

    #[error("matrix is not positive definite (lambda_min = {lambda_min:.3e})")]
    NotSpd { lambda_min: f64 },

    #[error("degenerate sample covariance (lambda_min = {lambda_min:.3e})")]
    DegenerateCovariance { lambda_min: f64 },

    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },

    #[error("need at least {required} samples, got {actual}")]
    TooFewSamples { required: usize, actual: usize },

    #[error("sixth moment of source family `{family}` is not finite")]
    InfiniteMoment { family: String },

    #[error("could not draw an acceptable mixing matrix in {attempts} attempts")]
    MixingResampleExhausted { attempts: usize },

    #[error("vector must have unit norm, got |w| = {norm}")]
    NonUnitVector { norm: f64 },

    #[error("non-degeneracy statistic too small: |alpha_{index}| = {alpha:.3e} < {guard}")]
    DegenerateAlpha { index: usize, alpha: f64, guard: f64 },

    #[error("matrix is singular")]
    SingularMatrix,

    #[error("column {col} has zero sample variance")]
    ZeroVarianceColumn { col: usize },

    #[error("permutation entry A[{row},rho({row})] vanishes; c2 is infinite")]
    VanishingDiagonal { row: usize },

    #[error("objective moved against the requested direction for {iters} iterations; check sign(alpha) and step size")]
    WrongExtremumSign { iters: usize },

    #[error("invalid parameter: {context}")]
    InvalidParameter { context: String },

    #[error("log-log fit needs >= 3 in-range points, got {count}")]
    TooFewFitPoints { count: usize },

    #[error("log-log fit requires positive values, got ({x}, {y})")]
    NonPositiveFitPoint { x: f64, y: f64 },

    #[error("{failed} of {total} row solves failed to converge (> {permille_limit} per mille allowed)")]
    TooManySolverFailures {
        failed: usize,
        total: usize,
        permille_limit: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
