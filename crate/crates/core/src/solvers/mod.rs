//! Penalized least-squares solvers.

mod cv;
mod lasso;
mod scaled;

pub use cv::{cv_curve, cv_lambda, fold_assignment, lambda_grid, CV_TOL};
pub(crate) use cv::{argmin_first, fold_rows, gram_path, validate_grid};
pub use lasso::{lasso_fit, lasso_fit_with, CdOptions, LassoFit, LassoRecord, GRAM_MAX_P, KKT_TOL};
pub(crate) use lasso::{support, GramProblem};
pub use scaled::{scaled_lasso_fit, universal_k0, universal_lambda0, NoiseEstimate, ScaledLassoFit};
