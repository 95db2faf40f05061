use std::path::PathBuf;

use thiserror::Error;

use crate::solvers::LassoFit;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("column {0} has zero sample variance")]
    ConstantColumn(usize),
    #[error("input contains NaN or infinite entries")]
    NonFinite,
    #[error("lambda = 0 requires p <= n (got n = {n}, p = {p})")]
    Underdetermined { n: usize, p: usize },
    #[error("coordinate descent did not converge after {} sweeps", .0.iterations)]
    DidNotConverge(Box<LassoFit>),
    #[error("fixed-point iteration for k0 did not converge (last iterate {last})")]
    NoFixedPoint { last: f64 },
    #[error("noise variance estimate collapsed ({sigma_sq:e})")]
    DegenerateVariance { sigma_sq: f64 },
    #[error("scaled Lasso selected {df} variables with n = {n}; modified variance undefined")]
    SaturatedFit { df: usize, n: usize },
    #[error("nodewise residual scale for column {column} is degenerate ({tau_sq:e})")]
    DegenerateTau { column: usize, tau_sq: f64 },
    #[error("nodewise regression failed for {} column(s), first: column {}: {}", .0.len(), .0[0].0, .0[0].1)]
    ColumnFailures(Vec<(usize, Error)>),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("group is empty")]
    EmptyGroup,
    #[error("group index {index} out of range for p = {p}")]
    GroupOutOfRange { index: usize, p: usize },
    #[error("bootstrap distribution does not match the requested test: {0}")]
    GroupMismatch(String),
    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("true support is empty")]
    EmptyTruth,
    #[error("sample split leaves {smaller} observations in one part (need at least 10)")]
    DegenerateSplit { smaller: usize },
    #[error("second derivative of the loss is non-positive at observation {index}")]
    NonPositiveWeight { index: usize },
    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{failed} of {reps} replications failed (limit is 1%)")]
    TooManyFailures { failed: usize, reps: usize },
    #[error("input not found: {}", .0.display())]
    InputNotFound(PathBuf),
    #[error("malformed input: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable name of the variant, used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ConstantColumn(_) => "ConstantColumn",
            Error::NonFinite => "NonFinite",
            Error::Underdetermined { .. } => "Underdetermined",
            Error::DidNotConverge(_) => "DidNotConverge",
            Error::NoFixedPoint { .. } => "NoFixedPoint",
            Error::DegenerateVariance { .. } => "DegenerateVariance",
            Error::SaturatedFit { .. } => "SaturatedFit",
            Error::DegenerateTau { .. } => "DegenerateTau",
            Error::ColumnFailures(_) => "ColumnFailures",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::EmptyGroup => "EmptyGroup",
            Error::GroupOutOfRange { .. } => "GroupOutOfRange",
            Error::GroupMismatch(_) => "GroupMismatch",
            Error::InvalidAlpha(_) => "InvalidAlpha",
            Error::EmptyTruth => "EmptyTruth",
            Error::DegenerateSplit { .. } => "DegenerateSplit",
            Error::NonPositiveWeight { .. } => "NonPositiveWeight",
            Error::NotPositiveDefinite => "NotPositiveDefinite",
            Error::InvalidScenario(_) => "InvalidScenario",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::TooManyFailures { .. } => "TooManyFailures",
            Error::InputNotFound(_) => "InputNotFound",
            Error::Parse(_) => "Parse",
            Error::Io(_) => "Io",
            Error::Csv(_) => "Csv",
            Error::Json(_) => "Json",
        }
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidAlpha(alpha))
    }
}
