//! Nodewise Lasso estimate of the precision matrix `Θ̂ = T̂⁻²Ĉ`.
//!
//! Row `j` of `Θ̂` comes from a Lasso regression of column `j` on the other
//! columns: `Θ̂_jj = 1/τ̂_j²` and `Θ̂_jk = −γ̂_jk/τ̂_j²`. Rows are independent
//! and computed in parallel. `Θ̂` is not symmetric in general.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{read_f64s, read_u64, Dataset};
use crate::error::{Error, Result};
use crate::rng;
use crate::solvers::{
    argmin_first, fold_assignment, fold_rows, gram_path, lambda_grid, validate_grid, CdOptions,
    GramProblem, LassoFit, CV_TOL, GRAM_MAX_P,
};

const DEGENERATE_TAU: f64 = 1e-12;
const CACHE_MAGIC: &[u8; 8] = b"HDPREC01";
pub const CACHE_ENV: &str = "HDINFER_CACHE_DIR";

/// One nodewise regression of column `column` on the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodewiseFit {
    pub column: usize,
    /// Nonzero coefficients `(k, γ̂_jk)` indexed by original column, `k ≠ j`.
    pub gamma: Vec<(usize, f64)>,
    pub tau_sq: f64,
    pub lambda: f64,
}

impl NodewiseFit {
    pub fn gamma_l1(&self) -> f64 {
        self.gamma.iter().map(|(_, g)| g.abs()).sum()
    }
}

/// Penalties for the p nodewise problems.
#[derive(Debug, Clone, PartialEq)]
pub enum Lambdas {
    Shared(f64),
    PerColumn(Vec<f64>),
}

impl Lambdas {
    fn expand(&self, p: usize) -> Result<Vec<f64>> {
        let v = match self {
            Lambdas::Shared(l) => vec![*l; p],
            Lambdas::PerColumn(v) if v.len() == p => v.clone(),
            Lambdas::PerColumn(v) => {
                return Err(Error::DimensionMismatch(format!(
                    "{} nodewise penalties for p = {p}",
                    v.len()
                )))
            }
        };
        if v.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::InvalidArgument("nodewise penalties must be > 0".into()));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionEstimate {
    /// Row `j` is `Θ̂_j`.
    pub theta: DMatrix<f64>,
    pub tau_sq: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub gammas: Vec<Vec<(usize, f64)>>,
}

impl PrecisionEstimate {
    pub fn p(&self) -> usize {
        self.tau_sq.len()
    }

    fn from_fits(p: usize, fits: Vec<NodewiseFit>) -> Self {
        let mut theta = DMatrix::zeros(p, p);
        let mut tau_sq = Vec::with_capacity(p);
        let mut lambdas = Vec::with_capacity(p);
        let mut gammas = Vec::with_capacity(p);
        for fit in fits {
            let j = fit.column;
            theta[(j, j)] = 1.0 / fit.tau_sq;
            for &(k, g) in &fit.gamma {
                theta[(j, k)] = -g / fit.tau_sq;
            }
            tau_sq.push(fit.tau_sq);
            lambdas.push(fit.lambda);
            gammas.push(fit.gamma);
        }
        PrecisionEstimate {
            theta,
            tau_sq,
            lambdas,
            gammas,
        }
    }

    /// `Θ̂Σ̂` for `Σ̂ = gram`.
    pub fn times_gram(&self, gram: &DMatrix<f64>) -> DMatrix<f64> {
        &self.theta * gram
    }
}

/// Nodewise regression of standardized column `j` at penalty `lambda_j`.
pub fn nodewise_regression(dataset: &Dataset, j: usize, lambda_j: f64) -> Result<NodewiseFit> {
    if !dataset.is_standardized() {
        return Err(Error::InvalidArgument(
            "nodewise regression requires a standardized dataset".into(),
        ));
    }
    let gram = (dataset.p() <= GRAM_MAX_P).then(|| dataset.gram());
    regress_column(dataset.x(), gram, j, lambda_j)
}

pub(crate) fn regress_column(
    x: &DMatrix<f64>,
    gram: Option<&DMatrix<f64>>,
    j: usize,
    lambda: f64,
) -> Result<NodewiseFit> {
    let (n, p) = x.shape();
    if p < 2 {
        return Err(Error::InvalidArgument("nodewise regression needs p >= 2".into()));
    }
    if j >= p {
        return Err(Error::GroupOutOfRange { index: j, p });
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda_j must be > 0, got {lambda}")));
    }
    let opts = CdOptions::default();
    let beta = match gram {
        Some(g) => {
            let xty: Vec<f64> = g.column(j).iter().copied().collect();
            let out = GramProblem {
                gram: g,
                xty: &xty,
                yty: g[(j, j)],
                skip: Some(j),
            }
            .solve(lambda, None, &opts);
            if !out.converged {
                return Err(not_converged(out.beta, lambda, out.sweeps));
            }
            out.beta
        }
        None => {
            let others: Vec<usize> = (0..p).filter(|&k| k != j).collect();
            let rest = Dataset::new(x.select_columns(others.iter()), x.column(j).into_owned())?;
            let fit = crate::solvers::lasso_fit(&rest, lambda, None)?;
            let mut beta = vec![0.0; p];
            for (pos, &k) in others.iter().enumerate() {
                beta[k] = fit.beta[pos];
            }
            beta
        }
    };
    let gamma: Vec<(usize, f64)> = beta
        .iter()
        .enumerate()
        .filter(|&(k, &b)| k != j && b != 0.0)
        .map(|(k, &b)| (k, b))
        .collect();
    let mut resid: DVector<f64> = x.column(j).into_owned();
    for &(k, g) in &gamma {
        resid.axpy(-g, &x.column(k), 1.0);
    }
    let l1: f64 = gamma.iter().map(|(_, g)| g.abs()).sum();
    let tau_sq = resid.norm_squared() / n as f64 + lambda * l1;
    if !(tau_sq >= DEGENERATE_TAU) {
        return Err(Error::DegenerateTau { column: j, tau_sq });
    }
    Ok(NodewiseFit {
        column: j,
        gamma,
        tau_sq,
        lambda,
    })
}

fn not_converged(beta: Vec<f64>, lambda: f64, sweeps: usize) -> Error {
    Error::DidNotConverge(Box::new(LassoFit {
        active_set: crate::solvers::support(&beta),
        beta,
        lambda,
        objective: f64::NAN,
        iterations: sweeps,
        converged: false,
        trace: Vec::new(),
    }))
}

/// Runs all p nodewise regressions and assembles `Θ̂`.
pub fn precision_estimate(dataset: &Dataset, lambdas: &Lambdas) -> Result<PrecisionEstimate> {
    if !dataset.is_standardized() {
        return Err(Error::InvalidArgument(
            "precision estimate requires a standardized dataset".into(),
        ));
    }
    let gram = (dataset.p() <= GRAM_MAX_P).then(|| dataset.gram());
    precision_from_design(dataset.x(), gram, lambdas)
}

/// Precision estimate for an arbitrary design (used on weighted designs).
pub(crate) fn precision_from_design(
    x: &DMatrix<f64>,
    gram: Option<&DMatrix<f64>>,
    lambdas: &Lambdas,
) -> Result<PrecisionEstimate> {
    let p = x.ncols();
    let lambdas = lambdas.expand(p)?;
    let results: Vec<Result<NodewiseFit>> = (0..p)
        .into_par_iter()
        .map(|j| regress_column(x, gram, j, lambdas[j]))
        .collect();
    let mut fits = Vec::with_capacity(p);
    let mut failures = Vec::new();
    for (j, r) in results.into_iter().enumerate() {
        match r {
            Ok(f) => fits.push(f),
            Err(e) => failures.push((j, e)),
        }
    }
    if !failures.is_empty() {
        return Err(Error::ColumnFailures(failures));
    }
    Ok(PrecisionEstimate::from_fits(p, fits))
}

/// Settings for the shared-λ cross-validation of the nodewise regressions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodewiseCv {
    pub folds: usize,
    pub grid_len: usize,
    /// Smallest grid value as a fraction of `λ_max`.
    pub grid_ratio: f64,
    /// Number of columns whose CV curves are averaged (all when `None` or ≥ p).
    pub subsample: Option<usize>,
    pub seed: u64,
}

impl Default for NodewiseCv {
    fn default() -> Self {
        NodewiseCv {
            folds: 10,
            grid_len: 50,
            grid_ratio: 0.01,
            subsample: Some(50),
            seed: 0,
        }
    }
}

/// `max_{j, k≠j} |X_kᵀX_j|/n`, the smallest penalty zeroing every nodewise fit.
pub fn nodewise_lambda_max(gram: &DMatrix<f64>) -> f64 {
    let p = gram.nrows();
    let mut m = 0.0f64;
    for j in 0..p {
        for k in 0..p {
            if k != j {
                m = m.max(gram[(k, j)].abs());
            }
        }
    }
    m
}

pub fn nodewise_grid(x: &DMatrix<f64>, len: usize, ratio: f64) -> Vec<f64> {
    let gram = x.tr_mul(x) / x.nrows() as f64;
    lambda_grid(nodewise_lambda_max(&gram), len, ratio)
}

/// Columns whose curves enter the shared CV average.
pub fn cv_columns(p: usize, subsample: Option<usize>, seed: u64) -> Vec<usize> {
    match subsample {
        Some(m) if m < p => {
            let mut cols = sample(&mut rng::stream(seed, 1), p, m).into_vec();
            cols.sort_unstable();
            cols
        }
        _ => (0..p).collect(),
    }
}

/// Cross-validation error curves, one per column in `columns`, each the mean
/// out-of-fold squared error over the n observations.
pub fn nodewise_cv_curves(
    x: &DMatrix<f64>,
    grid: &[f64],
    folds: usize,
    seed: u64,
    columns: &[usize],
) -> Result<Vec<Vec<f64>>> {
    let (n, p) = x.shape();
    validate_grid(grid, folds, n)?;
    if p < 2 {
        return Err(Error::InvalidArgument("nodewise CV needs p >= 2".into()));
    }
    let assign = fold_assignment(n, folds, seed);
    let opts = CdOptions {
        tol: CV_TOL,
        ..CdOptions::default()
    };
    let mut curves = vec![vec![0.0; grid.len()]; columns.len()];
    for (train, test) in fold_rows(&assign, folds) {
        let x_train = x.select_rows(train.iter());
        let gram = x_train.tr_mul(&x_train) / train.len() as f64;
        let x_test = x.select_rows(test.iter());
        let fold_errors: Vec<Result<Vec<f64>>> = columns
            .par_iter()
            .map(|&j| {
                let xty: Vec<f64> = gram.column(j).iter().copied().collect();
                let problem = GramProblem {
                    gram: &gram,
                    xty: &xty,
                    yty: gram[(j, j)],
                    skip: Some(j),
                };
                let path = gram_path(&problem, grid, &opts)?;
                Ok(path
                    .iter()
                    .map(|gamma| {
                        let pred = &x_test * DVector::from_column_slice(gamma);
                        x_test
                            .column(j)
                            .iter()
                            .zip(pred.iter())
                            .map(|(a, b)| (a - b).powi(2))
                            .sum::<f64>()
                    })
                    .collect())
            })
            .collect();
        for (curve, errs) in curves.iter_mut().zip(fold_errors) {
            for (c, e) in curve.iter_mut().zip(errs?) {
                *c += e;
            }
        }
    }
    for curve in &mut curves {
        for c in curve.iter_mut() {
            *c /= n as f64;
        }
    }
    Ok(curves)
}

/// One λ shared by all nodewise regressions: the minimizer of the CV error
/// curve averaged over a seeded subsample of columns (ties toward larger λ).
pub fn shared_cv_lambda_nodewise(
    dataset: &Dataset,
    grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<f64> {
    let cv = NodewiseCv {
        folds,
        seed,
        ..NodewiseCv::default()
    };
    shared_cv_lambda_design(dataset.x(), grid, &cv)
}

pub(crate) fn shared_cv_lambda_design(x: &DMatrix<f64>, grid: &[f64], cv: &NodewiseCv) -> Result<f64> {
    let columns = cv_columns(x.ncols(), cv.subsample, rng::derive_seed(cv.seed, &[1]));
    let curves = nodewise_cv_curves(x, grid, cv.folds, rng::derive_seed(cv.seed, &[0]), &columns)?;
    let mut mean = vec![0.0; grid.len()];
    for curve in &curves {
        for (m, c) in mean.iter_mut().zip(curve) {
            *m += c;
        }
    }
    Ok(grid[argmin_first(&mean)])
}

/// Shared CV λ on the default grid followed by the precision estimate.
pub fn precision_with_cv(dataset: &Dataset, cv: &NodewiseCv) -> Result<PrecisionEstimate> {
    let grid = nodewise_grid(dataset.x(), cv.grid_len, cv.grid_ratio);
    let lambda = shared_cv_lambda_design(dataset.x(), &grid, cv)?;
    precision_estimate(dataset, &Lambdas::Shared(lambda))
}

/// On-disk cache of precision estimates keyed by design and penalties.
#[derive(Debug, Clone)]
pub struct PrecisionCache {
    dir: PathBuf,
}

impl PrecisionCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        PrecisionCache { dir: dir.into() }
    }

    /// Cache rooted at `$HDINFER_CACHE_DIR`, if set.
    pub fn from_env() -> Option<Self> {
        std::env::var_os(CACHE_ENV).map(|d| PrecisionCache::new(PathBuf::from(d)))
    }

    pub fn key(dataset: &Dataset, lambdas: &[f64]) -> String {
        let mut h = Sha256::new();
        h.update(dataset.design_hash());
        for l in lambdas {
            h.update(l.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.prec"))
    }

    pub fn load(&self, dataset: &Dataset, lambdas: &[f64]) -> Result<Option<PrecisionEstimate>> {
        let path = self.path(&Self::key(dataset, lambdas));
        if !path.exists() {
            return Ok(None);
        }
        read_precision(&path).map(Some)
    }

    pub fn store(&self, dataset: &Dataset, est: &PrecisionEstimate) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.dir)?;
        let path = self.path(&Self::key(dataset, &est.lambdas));
        write_precision(&path, est)?;
        Ok(path)
    }

    /// Returns the cached estimate or computes and stores it.
    pub fn get_or_compute(&self, dataset: &Dataset, lambdas: &Lambdas) -> Result<PrecisionEstimate> {
        let expanded = lambdas.expand(dataset.p())?;
        if let Some(est) = self.load(dataset, &expanded)? {
            return Ok(est);
        }
        let est = precision_estimate(dataset, lambdas)?;
        self.store(dataset, &est)?;
        Ok(est)
    }
}

pub fn write_precision(path: &Path, est: &PrecisionEstimate) -> Result<()> {
    let p = est.p();
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&(p as u64).to_le_bytes())?;
    for v in est.tau_sq.iter().chain(&est.lambdas).chain(est.theta.iter()) {
        w.write_all(&v.to_le_bytes())?;
    }
    for gamma in &est.gammas {
        w.write_all(&(gamma.len() as u64).to_le_bytes())?;
        for &(k, g) in gamma {
            w.write_all(&(k as u64).to_le_bytes())?;
            w.write_all(&g.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_precision(path: &Path) -> Result<PrecisionEstimate> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CACHE_MAGIC {
        return Err(Error::Parse(format!("{} is not a precision cache", path.display())));
    }
    let p = read_u64(&mut r)? as usize;
    let tau_sq = read_f64s(&mut r, p)?;
    let lambdas = read_f64s(&mut r, p)?;
    let theta = DMatrix::from_vec(p, p, read_f64s(&mut r, p * p)?);
    let mut gammas = Vec::with_capacity(p);
    for _ in 0..p {
        let len = read_u64(&mut r)? as usize;
        let mut gamma = Vec::with_capacity(len);
        for _ in 0..len {
            let k = read_u64(&mut r)? as usize;
            let g = read_f64s(&mut r, 1)?[0];
            gamma.push((k, g));
        }
        gammas.push(gamma);
    }
    Ok(PrecisionEstimate {
        theta,
        tau_sq,
        lambdas,
        gammas,
    })
}
