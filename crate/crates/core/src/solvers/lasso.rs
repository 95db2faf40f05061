//! Cyclic coordinate descent for `‖y − Xβ‖²/n + 2λ‖β‖₁`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Largest `p` for which the Gram matrix is precomputed.
pub const GRAM_MAX_P: usize = 2000;
pub const KKT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
pub struct CdOptions {
    /// Convergence threshold on the largest coefficient change in a full sweep.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Record the objective after every sweep.
    pub trace: bool,
}

impl Default for CdOptions {
    fn default() -> Self {
        CdOptions {
            tol: 1e-8,
            max_sweeps: 10_000,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    pub beta: Vec<f64>,
    pub lambda: f64,
    pub active_set: Vec<usize>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each sweep when tracing was requested.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<f64>,
}

/// The JSON record written for a fit. Indices are 1-based.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LassoRecord {
    pub beta: Vec<f64>,
    pub lambda: f64,
    pub active_set: Vec<usize>,
    pub objective: f64,
}

impl LassoFit {
    pub fn record(&self) -> LassoRecord {
        LassoRecord {
            beta: self.beta.clone(),
            lambda: self.lambda,
            active_set: self.active_set.iter().map(|j| j + 1).collect(),
            objective: self.objective,
        }
    }

    pub fn residuals(&self, dataset: &Dataset) -> DVector<f64> {
        dataset.y() - dataset.x() * DVector::from_column_slice(&self.beta)
    }

    /// Largest violation of the Lasso optimality conditions.
    pub fn kkt_violation(&self, dataset: &Dataset) -> f64 {
        let r = self.residuals(dataset);
        let grad = dataset.x().tr_mul(&r) / dataset.n() as f64;
        kkt_excess(&self.beta, grad.as_slice(), self.lambda)
    }
}

pub(crate) fn kkt_excess(beta: &[f64], grad: &[f64], lambda: f64) -> f64 {
    beta.iter()
        .zip(grad)
        .map(|(&b, &g)| {
            if b != 0.0 {
                (g - lambda * b.signum()).abs()
            } else {
                (g.abs() - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

#[inline]
pub(crate) fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

pub(crate) struct CdOutcome {
    pub beta: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
    pub trace: Vec<f64>,
}

/// One coordinate-wise problem representation.
trait Coordinates {
    fn dim(&self) -> usize;
    fn skipped(&self, k: usize) -> bool;
    /// Minimizes over coordinate `k` in place and returns `|Δβ_k|`.
    fn update(&mut self, k: usize, beta: &mut [f64], lambda: f64) -> f64;
    fn objective(&self, beta: &[f64], lambda: f64) -> f64;
    /// Restricts updates to `active` until [`Coordinates::release`].
    fn restrict(&mut self, _active: &[usize]) {}
    fn release(&mut self, _beta: &[f64]) {}
}

fn drive<C: Coordinates>(
    coords: &mut C,
    mut beta: Vec<f64>,
    lambda: f64,
    opts: &CdOptions,
) -> CdOutcome {
    let p = coords.dim();
    let all: Vec<usize> = (0..p).filter(|&k| !coords.skipped(k)).collect();
    let mut trace = Vec::new();
    if opts.trace {
        trace.push(coords.objective(&beta, lambda));
    }
    let mut sweeps = 0;
    let mut converged = false;
    let sweep = |coords: &mut C, beta: &mut Vec<f64>, idx: &[usize], trace: &mut Vec<f64>| {
        let mut max_change = 0.0f64;
        for &k in idx {
            max_change = max_change.max(coords.update(k, beta, lambda));
        }
        if opts.trace {
            trace.push(coords.objective(beta, lambda));
        }
        max_change
    };
    while sweeps < opts.max_sweeps {
        let change = sweep(coords, &mut beta, &all, &mut trace);
        sweeps += 1;
        if change < opts.tol {
            converged = true;
            break;
        }
        // Iterate on the current support until it settles, then re-check all.
        let active: Vec<usize> = all.iter().copied().filter(|&k| beta[k] != 0.0).collect();
        coords.restrict(&active);
        while sweeps < opts.max_sweeps {
            let change = sweep(coords, &mut beta, &active, &mut trace);
            sweeps += 1;
            if change < opts.tol {
                break;
            }
        }
        coords.release(&beta);
    }
    CdOutcome {
        beta,
        sweeps,
        converged,
        trace,
    }
}

/// Covariance-update coordinate descent on a precomputed Gram matrix.
///
/// `gram = XᵀX/n`, `xty = Xᵀy/n`, `yty = yᵀy/n`. Coordinate `skip`, when
/// given, is held at zero; nodewise regressions use this to drop column `j`
/// without copying the Gram matrix.
pub(crate) struct GramProblem<'a> {
    pub gram: &'a DMatrix<f64>,
    pub xty: &'a [f64],
    pub yty: f64,
    pub skip: Option<usize>,
}

struct GramState<'a> {
    problem: &'a GramProblem<'a>,
    /// `xty − gram·β`, i.e. `Xᵀ(y − Xβ)/n`. Only entries in `active` are
    /// current while restricted.
    grad: Vec<f64>,
    active: Option<Vec<usize>>,
}

impl GramState<'_> {
    fn refresh(&mut self, beta: &[f64]) {
        self.grad.copy_from_slice(self.problem.xty);
        for (k, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                for (g, &c) in self.grad.iter_mut().zip(self.problem.gram.column(k).iter()) {
                    *g -= c * b;
                }
            }
        }
    }
}

impl Coordinates for GramState<'_> {
    fn dim(&self) -> usize {
        self.grad.len()
    }

    fn skipped(&self, k: usize) -> bool {
        self.problem.skip == Some(k)
    }

    fn update(&mut self, k: usize, beta: &mut [f64], lambda: f64) -> f64 {
        let gram = self.problem.gram;
        let gkk = gram[(k, k)];
        let old = beta[k];
        let new = if gkk > 0.0 {
            soft_threshold(self.grad[k] + gkk * old, lambda) / gkk
        } else {
            0.0
        };
        let delta = new - old;
        if delta != 0.0 {
            beta[k] = new;
            let col = gram.column(k);
            match &self.active {
                Some(active) => {
                    for &i in active {
                        self.grad[i] -= col[i] * delta;
                    }
                }
                None => {
                    for (g, &c) in self.grad.iter_mut().zip(col.iter()) {
                        *g -= c * delta;
                    }
                }
            }
        }
        delta.abs()
    }

    fn restrict(&mut self, active: &[usize]) {
        self.active = Some(active.to_vec());
    }

    fn release(&mut self, beta: &[f64]) {
        if self.active.take().is_some() {
            self.refresh(beta);
        }
    }

    fn objective(&self, beta: &[f64], lambda: f64) -> f64 {
        // ‖y − Xβ‖²/n = yty − βᵀxty − βᵀgrad; only entries with β_k ≠ 0
        // enter, so a restricted gradient suffices.
        let mut fit = 0.0;
        let mut l1 = 0.0;
        for ((b, xty), g) in beta.iter().zip(self.problem.xty).zip(&self.grad) {
            fit += b * (xty + g);
            l1 += b.abs();
        }
        self.problem.yty - fit + 2.0 * lambda * l1
    }
}

impl GramProblem<'_> {
    pub fn solve(&self, lambda: f64, warm: Option<&[f64]>, opts: &CdOptions) -> CdOutcome {
        let p = self.xty.len();
        let mut beta = warm.map_or_else(|| vec![0.0; p], <[f64]>::to_vec);
        if let Some(j) = self.skip {
            beta[j] = 0.0;
        }
        let mut state = GramState {
            problem: self,
            grad: vec![0.0; p],
            active: None,
        };
        state.refresh(&beta);
        drive(&mut state, beta, lambda, opts)
    }
}

/// Coordinate descent maintaining the residual vector; used when `p` is too
/// large for a dense Gram matrix.
pub(crate) struct ResidualProblem<'a> {
    pub x: &'a DMatrix<f64>,
    pub y: &'a [f64],
}

struct ResidualState<'a> {
    x: &'a DMatrix<f64>,
    col_sq: Vec<f64>,
    resid: Vec<f64>,
}

impl Coordinates for ResidualState<'_> {
    fn dim(&self) -> usize {
        self.col_sq.len()
    }

    fn skipped(&self, _k: usize) -> bool {
        false
    }

    fn update(&mut self, k: usize, beta: &mut [f64], lambda: f64) -> f64 {
        let n = self.resid.len() as f64;
        let col = self.x.column(k);
        let ckk = self.col_sq[k];
        let old = beta[k];
        let new = if ckk > 0.0 {
            let g: f64 = col.iter().zip(&self.resid).map(|(a, r)| a * r).sum::<f64>() / n;
            soft_threshold(g + ckk * old, lambda) / ckk
        } else {
            0.0
        };
        let delta = new - old;
        if delta != 0.0 {
            beta[k] = new;
            for (r, &a) in self.resid.iter_mut().zip(col.iter()) {
                *r -= a * delta;
            }
        }
        delta.abs()
    }

    fn objective(&self, beta: &[f64], lambda: f64) -> f64 {
        let n = self.resid.len() as f64;
        self.resid.iter().map(|r| r * r).sum::<f64>() / n
            + 2.0 * lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
    }
}

impl ResidualProblem<'_> {
    pub fn solve(&self, lambda: f64, warm: Option<&[f64]>, opts: &CdOptions) -> CdOutcome {
        let (n, p) = self.x.shape();
        let beta = warm.map_or_else(|| vec![0.0; p], <[f64]>::to_vec);
        let fitted = self.x * DVector::from_column_slice(&beta);
        let resid = self.y.iter().zip(fitted.iter()).map(|(y, f)| y - f).collect();
        let col_sq = self
            .x
            .column_iter()
            .map(|c| c.norm_squared() / n as f64)
            .collect();
        let mut state = ResidualState {
            x: self.x,
            col_sq,
            resid,
        };
        drive(&mut state, beta, lambda, opts)
    }
}

/// Fits the Lasso at penalty `lambda` with default solver options.
///
/// Non-convergence is reported as [`Error::DidNotConverge`] carrying the
/// partial fit.
pub fn lasso_fit(dataset: &Dataset, lambda: f64, warm_start: Option<&[f64]>) -> Result<LassoFit> {
    lasso_fit_with(dataset, lambda, warm_start, &CdOptions::default())
}

pub fn lasso_fit_with(
    dataset: &Dataset,
    lambda: f64,
    warm_start: Option<&[f64]>,
    opts: &CdOptions,
) -> Result<LassoFit> {
    let (n, p) = (dataset.n(), dataset.p());
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    if lambda == 0.0 && p > n {
        return Err(Error::Underdetermined { n, p });
    }
    if let Some(w) = warm_start {
        if w.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "warm start has length {}, expected {p}",
                w.len()
            )));
        }
    }
    let outcome = if p <= GRAM_MAX_P {
        let xty = dataset.xty();
        GramProblem {
            gram: dataset.gram(),
            xty: xty.as_slice(),
            yty: dataset.y().norm_squared() / n as f64,
            skip: None,
        }
        .solve(lambda, warm_start, opts)
    } else {
        ResidualProblem {
            x: dataset.x(),
            y: dataset.y().as_slice(),
        }
        .solve(lambda, warm_start, opts)
    };
    let fit = finish(dataset, lambda, outcome);
    if fit.converged {
        Ok(fit)
    } else {
        Err(Error::DidNotConverge(Box::new(fit)))
    }
}

fn finish(dataset: &Dataset, lambda: f64, outcome: CdOutcome) -> LassoFit {
    let n = dataset.n() as f64;
    let beta = outcome.beta;
    let resid = dataset.y() - dataset.x() * DVector::from_column_slice(&beta);
    let objective =
        resid.norm_squared() / n + 2.0 * lambda * beta.iter().map(|b| b.abs()).sum::<f64>();
    LassoFit {
        active_set: support(&beta),
        beta,
        lambda,
        objective,
        iterations: outcome.sweeps,
        converged: outcome.converged,
        trace: outcome.trace,
    }
}

pub(crate) fn support(beta: &[f64]) -> Vec<usize> {
    beta.iter()
        .enumerate()
        .filter(|(_, &b)| b != 0.0)
        .map(|(j, _)| j)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::standardize;
    use crate::sim::{make_covariance, sample_design, Covariance};
    use proptest::prelude::*;

    fn toeplitz_dataset(n: usize, p: usize, seed: u64) -> Dataset {
        let sigma = make_covariance(&Covariance::Toeplitz { rho: 0.6 }, p);
        let x = sample_design(&sigma, n, seed).unwrap();
        let y = DVector::from_fn(n, |i, _| {
            x[(i, 0)] - 0.5 * x[(i, p.min(3) - 1)] + 0.3 * ((i * 13 % 7) as f64 - 3.0)
        });
        standardize(&Dataset::new(x, y).unwrap()).unwrap()
    }

    #[test]
    fn zero_response_gives_zero_fit() {
        let ds = toeplitz_dataset(30, 8, 1).with_response(DVector::zeros(30)).unwrap();
        let fit = lasso_fit(&ds, 0.1, None).unwrap();
        assert!(fit.beta.iter().all(|&b| b == 0.0));
        assert!(fit.active_set.is_empty());
    }

    #[test]
    fn orthonormal_design_is_soft_thresholding() {
        // Columns of a scaled 4×4 Hadamard matrix: XᵀX/n = I.
        let h = [
            [1.0, 1.0, 1.0, 1.0],
            [1.0, -1.0, 1.0, -1.0],
            [1.0, 1.0, -1.0, -1.0],
            [1.0, -1.0, -1.0, 1.0],
        ];
        let x = DMatrix::from_fn(4, 3, |i, j| h[i][j + 1]);
        let y = DVector::from_column_slice(&[0.9, -0.4, 1.3, 0.2]);
        let ds = Dataset::new(x.clone(), y.clone()).unwrap();
        let lambda = 0.2;
        let fit = lasso_fit(&ds, lambda, None).unwrap();
        for j in 0..3 {
            let z = x.column(j).dot(&y) / 4.0;
            let expect = z.signum() * (z.abs() - lambda).max(0.0);
            assert!((fit.beta[j] - expect).abs() < 1e-12, "j={j}");
        }
    }

    #[test]
    fn two_dimensional_grid_oracle() {
        // Fixed n = 10, p = 2 instance; the oracle scans β ∈ [−3, 3]² at step 1e-3.
        let x = DMatrix::from_row_slice(
            10,
            2,
            &[
                0.3, 1.2, -1.1, 0.4, 0.8, -0.7, 1.5, 0.9, -0.2, -1.3, 0.6, 0.1, -1.4, -0.5, 0.9,
                1.1, 0.1, -0.8, -1.0, 0.2,
            ],
        );
        let y = DVector::from_column_slice(&[1.1, -0.9, 0.2, 2.3, -1.0, 0.5, -1.9, 1.8, -0.3, -0.6]);
        let ds = Dataset::new(x.clone(), y.clone()).unwrap();
        let lambda = 0.05;
        let fit = lasso_fit(&ds, lambda, None).unwrap();

        let objective = |b0: f64, b1: f64| {
            let mut rss = 0.0;
            for i in 0..10 {
                let r = y[i] - x[(i, 0)] * b0 - x[(i, 1)] * b1;
                rss += r * r;
            }
            rss / 10.0 + 2.0 * lambda * (b0.abs() + b1.abs())
        };
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for a in 0..=6000 {
            let b0 = -3.0 + a as f64 * 1e-3;
            for c in 0..=6000 {
                let b1 = -3.0 + c as f64 * 1e-3;
                let v = objective(b0, b1);
                if v < best.0 {
                    best = (v, b0, b1);
                }
            }
        }
        assert!(fit.objective <= best.0 + 1e-12);
        assert!(best.0 - fit.objective < 1e-5);
        assert!((fit.beta[0] - best.1).abs() <= 1e-3 + 1e-9);
        assert!((fit.beta[1] - best.2).abs() <= 1e-3 + 1e-9);
    }

    #[test]
    fn kkt_and_objective_invariants() {
        let ds = toeplitz_dataset(60, 40, 2);
        for &lambda in &[0.5, 0.1, 0.02] {
            let fit = lasso_fit(&ds, lambda, None).unwrap();
            assert!(fit.kkt_violation(&ds) <= KKT_TOL, "lambda={lambda}");
            let r = fit.residuals(&ds);
            let obj = r.norm_squared() / 60.0
                + 2.0 * lambda * fit.beta.iter().map(|b| b.abs()).sum::<f64>();
            assert!((obj - fit.objective).abs() <= 1e-10 * obj.abs());
        }
    }

    #[test]
    fn objective_never_increases_across_sweeps() {
        let ds = toeplitz_dataset(50, 80, 3);
        let opts = CdOptions {
            trace: true,
            ..CdOptions::default()
        };
        for &lambda in &[0.3, 0.05, 0.01] {
            let fit = lasso_fit_with(&ds, lambda, None, &opts).unwrap();
            assert!(fit.trace.len() >= 2);
            for w in fit.trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0), "{w:?}");
            }
        }
    }

    #[test]
    fn lambda_zero_matches_least_squares() {
        let ds = toeplitz_dataset(80, 6, 4);
        let fit = lasso_fit(&ds, 0.0, None).unwrap();
        let xtx = ds.x().tr_mul(ds.x());
        let xty = ds.x().tr_mul(ds.y());
        let ols = xtx.lu().solve(&xty).unwrap();
        for j in 0..6 {
            assert!((fit.beta[j] - ols[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn lambda_zero_underdetermined() {
        let ds = toeplitz_dataset(10, 20, 5);
        assert!(matches!(lasso_fit(&ds, 0.0, None), Err(Error::Underdetermined { .. })));
    }

    #[test]
    fn non_convergence_carries_partial_fit() {
        let ds = toeplitz_dataset(40, 30, 6);
        let opts = CdOptions {
            max_sweeps: 1,
            ..CdOptions::default()
        };
        match lasso_fit_with(&ds, 0.01, None, &opts) {
            Err(Error::DidNotConverge(fit)) => {
                assert_eq!(fit.iterations, 1);
                assert!(!fit.converged);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn residual_and_gram_paths_agree() {
        let ds = toeplitz_dataset(40, 25, 7);
        let opts = CdOptions::default();
        let xty = ds.xty();
        let gram = GramProblem {
            gram: ds.gram(),
            xty: xty.as_slice(),
            yty: ds.y().norm_squared() / 40.0,
            skip: None,
        }
        .solve(0.05, None, &opts);
        let resid = ResidualProblem {
            x: ds.x(),
            y: ds.y().as_slice(),
        }
        .solve(0.05, None, &opts);
        for (a, b) in gram.beta.iter().zip(&resid.beta) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn record_uses_one_based_indices() {
        let ds = toeplitz_dataset(40, 10, 8);
        let fit = lasso_fit(&ds, 0.05, None).unwrap();
        let rec = fit.record();
        assert_eq!(
            rec.active_set,
            fit.active_set.iter().map(|j| j + 1).collect::<Vec<_>>()
        );
        let json = serde_json::to_value(&rec).unwrap();
        let keys: Vec<_> = json.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys.len(), 4);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn warm_start_matches_cold_start(seed in 0u64..1000, lambda in 0.02f64..0.4) {
            let ds = toeplitz_dataset(50, 30, seed);
            let cold = lasso_fit(&ds, lambda, None).unwrap();
            let other = lasso_fit(&ds, lambda * 1.7, None).unwrap();
            let warm = lasso_fit(&ds, lambda, Some(&other.beta)).unwrap();
            for (a, b) in cold.beta.iter().zip(&warm.beta) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }
    }
}
