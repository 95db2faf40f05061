//! K-fold cross-validation over a descending λ grid.

use nalgebra::DVector;
use rand::seq::SliceRandom;

use super::lasso::{CdOptions, GramProblem, LassoFit};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng;

/// Coordinate-descent tolerance for fits that only feed a CV error curve.
/// Reported fits use the tighter default.
pub const CV_TOL: f64 = 1e-5;

/// Seeded partition of `0..n` into `folds` near-equal blocks; entry `i` is
/// the fold of observation `i`.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, 0));
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % folds;
    }
    fold
}

/// `len` log-spaced values from `lambda_max` down to `ratio·lambda_max`.
pub fn lambda_grid(lambda_max: f64, len: usize, ratio: f64) -> Vec<f64> {
    match len {
        0 => Vec::new(),
        1 => vec![lambda_max],
        _ => {
            let step = ratio.ln() / (len - 1) as f64;
            (0..len).map(|k| lambda_max * (step * k as f64).exp()).collect()
        }
    }
}

pub(crate) fn validate_grid(grid: &[f64], folds: usize, n: usize) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("lambda grid is empty".into()));
    }
    if grid.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return Err(Error::InvalidArgument("lambda grid must be positive".into()));
    }
    if grid.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::InvalidArgument("lambda grid must be sorted descending".into()));
    }
    if folds < 2 || folds > n {
        return Err(Error::InvalidArgument(format!(
            "folds must lie in [2, n = {n}], got {folds}"
        )));
    }
    Ok(())
}

/// Training/test row indices for every fold.
pub(crate) fn fold_rows(assign: &[usize], folds: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
    (0..folds)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..assign.len()).partition(|&i| assign[i] == f);
            (train, test)
        })
        .collect()
}

/// Index of the smallest value, preferring the earliest (largest λ) on ties.
pub(crate) fn argmin_first(curve: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in curve.iter().enumerate() {
        if v < curve[best] {
            best = k;
        }
    }
    best
}

/// Coefficient path over a descending grid with warm starts.
pub(crate) fn gram_path(problem: &GramProblem<'_>, grid: &[f64], opts: &CdOptions) -> Result<Vec<Vec<f64>>> {
    let mut path: Vec<Vec<f64>> = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let out = problem.solve(lambda, path.last().map(Vec::as_slice), opts);
        if !out.converged {
            return Err(Error::DidNotConverge(Box::new(LassoFit {
                active_set: super::lasso::support(&out.beta),
                beta: out.beta,
                lambda,
                objective: f64::NAN,
                iterations: out.sweeps,
                converged: false,
                trace: Vec::new(),
            })));
        }
        path.push(out.beta);
    }
    Ok(path)
}

/// Mean out-of-fold squared prediction error for every grid value.
pub fn cv_curve(dataset: &Dataset, grid: &[f64], folds: usize, seed: u64) -> Result<Vec<f64>> {
    let n = dataset.n();
    validate_grid(grid, folds, n)?;
    let assign = fold_assignment(n, folds, seed);
    let opts = CdOptions {
        tol: CV_TOL,
        ..CdOptions::default()
    };
    let mut total = vec![0.0; grid.len()];
    for (train, test) in fold_rows(&assign, folds) {
        let train_ds = dataset.select_rows(&train)?;
        let xty = train_ds.xty();
        let problem = GramProblem {
            gram: train_ds.gram(),
            xty: xty.as_slice(),
            yty: train_ds.y().norm_squared() / train.len() as f64,
            skip: None,
        };
        let path = gram_path(&problem, grid, &opts)?;
        let x_test = dataset.x().select_rows(test.iter());
        let y_test = DVector::from_iterator(test.len(), test.iter().map(|&i| dataset.y()[i]));
        for (k, beta) in path.iter().enumerate() {
            let resid = &y_test - &x_test * DVector::from_column_slice(beta);
            total[k] += resid.norm_squared();
        }
    }
    Ok(total.into_iter().map(|t| t / n as f64).collect())
}

/// The grid value minimizing the cross-validated error; ties go to the
/// larger λ.
pub fn cv_lambda(dataset: &Dataset, grid: &[f64], folds: usize, seed: u64) -> Result<f64> {
    let curve = cv_curve(dataset, grid, folds, seed)?;
    Ok(grid[argmin_first(&curve)])
}
