//! De-biased estimation and multiplier bootstrap for convex losses
//! `L(y, xᵀβ)`, with logistic and squared-error instances.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bootstrap::{BootstrapDistribution, MultiplierScores, Variant};
use crate::dataset::Dataset;
use crate::desparsify::{check_group, Interval, SimultaneousCi};
use crate::error::{Error, Result};
use crate::nodewise::{
    nodewise_lambda_max, precision_from_design, shared_cv_lambda_design, Lambdas, NodewiseCv, PrecisionEstimate,
};
use crate::solvers::{lambda_grid, support, LassoFit, GRAM_MAX_P};

const MIN_WEIGHT: f64 = 1e-12;
const PG_MAX_ITER: usize = 200_000;
const PG_TOL: f64 = 1e-9;
const STATIONARITY_TOL: f64 = 1e-5;

/// A loss `L(y, a)` convex in `a`, with first and second derivatives in `a`.
#[derive(Clone, Copy)]
pub struct LossSpec {
    pub name: &'static str,
    pub loss: fn(f64, f64) -> f64,
    pub dloss: fn(f64, f64) -> f64,
    pub d2loss: fn(f64, f64) -> f64,
}

impl std::fmt::Debug for LossSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LossSpec").field("name", &self.name).finish()
    }
}

fn expit(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + eᵃ)`.
fn softplus(a: f64) -> f64 {
    if a > 0.0 {
        a + (-a).exp().ln_1p()
    } else {
        a.exp().ln_1p()
    }
}

fn logistic_l(y: f64, a: f64) -> f64 {
    softplus(a) - y * a
}

fn logistic_dl(y: f64, a: f64) -> f64 {
    expit(a) - y
}

fn logistic_d2l(_y: f64, a: f64) -> f64 {
    let e = (-a.abs()).exp();
    e / ((1.0 + e) * (1.0 + e))
}

fn squared_l(y: f64, a: f64) -> f64 {
    0.5 * (y - a) * (y - a)
}

fn squared_dl(y: f64, a: f64) -> f64 {
    a - y
}

fn squared_d2l(_y: f64, _a: f64) -> f64 {
    1.0
}

/// `L(y, a) = −ya + log(1 + eᵃ)` for `y ∈ {0, 1}`.
pub fn logistic_loss() -> LossSpec {
    LossSpec {
        name: "logistic",
        loss: logistic_l,
        dloss: logistic_dl,
        d2loss: logistic_d2l,
    }
}

/// `L(y, a) = (y − a)²/2`.
pub fn squared_loss() -> LossSpec {
    LossSpec {
        name: "squared",
        loss: squared_l,
        dloss: squared_dl,
        d2loss: squared_d2l,
    }
}

impl LossSpec {
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "logistic" => Ok(logistic_loss()),
            "squared" => Ok(squared_loss()),
            other => Err(Error::InvalidArgument(format!("unknown loss '{other}'"))),
        }
    }

    fn mean_loss(&self, y: &DVector<f64>, eta: &DVector<f64>) -> f64 {
        y.iter().zip(eta.iter()).map(|(&y, &a)| (self.loss)(y, a)).sum::<f64>() / y.len() as f64
    }

    fn derivs(&self, y: &DVector<f64>, eta: &DVector<f64>, f: fn(f64, f64) -> f64) -> DVector<f64> {
        DVector::from_iterator(y.len(), y.iter().zip(eta.iter()).map(|(&y, &a)| f(y, a)))
    }
}

/// `max_j dist(−g_j, λ∂|β_j|)` for the gradient `g`.
fn stationarity(beta: &[f64], grad: &DVector<f64>, lambda: f64) -> f64 {
    beta.iter()
        .zip(grad.iter())
        .map(|(&b, &g)| {
            if b > 0.0 {
                (g + lambda).abs()
            } else if b < 0.0 {
                (g - lambda).abs()
            } else {
                (g.abs() - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

fn soft(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Minimizes `E_n L(y_i, x_iᵀβ) + λ‖β‖₁` by proximal gradient with
/// backtracking. With the squared loss this is half the linear Lasso
/// objective at the same `λ`, so both share a minimizer.
pub fn glm_lasso_fit(dataset: &Dataset, loss: &LossSpec, lambda: f64) -> Result<LassoFit> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    let x = dataset.x();
    let y = dataset.y();
    let (n, p) = (dataset.n(), dataset.p());
    let nf = n as f64;
    let mut beta = DVector::<f64>::zeros(p);
    let mut eta = DVector::<f64>::zeros(n);
    let mut smooth = loss.mean_loss(y, &eta);
    let mut grad = x.tr_mul(&loss.derivs(y, &eta, loss.dloss)) / nf;
    let mut step = 1.0;
    let mut trace = vec![smooth];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < PG_MAX_ITER {
        if stationarity(beta.as_slice(), &grad, lambda) < PG_TOL {
            converged = true;
            break;
        }
        iterations += 1;
        let (next, next_eta, next_smooth) = loop {
            let cand = DVector::from_iterator(p, (0..p).map(|j| soft(beta[j] - step * grad[j], step * lambda)));
            let diff = &cand - &beta;
            let cand_eta = x * &cand;
            let cand_smooth = loss.mean_loss(y, &cand_eta);
            let bound = smooth + grad.dot(&diff) + diff.norm_squared() / (2.0 * step);
            if cand_smooth <= bound + 1e-15 * smooth.abs().max(1.0) || step < 1e-20 {
                break (cand, cand_eta, cand_smooth);
            }
            step *= 0.5;
        };
        let change = (&next - &beta).amax();
        beta = next;
        eta = next_eta;
        smooth = next_smooth;
        grad = x.tr_mul(&loss.derivs(y, &eta, loss.dloss)) / nf;
        trace.push(smooth + lambda * beta.lp_norm(1));
        step *= 1.25;
        if change == 0.0 {
            converged = stationarity(beta.as_slice(), &grad, lambda) < STATIONARITY_TOL;
            break;
        }
    }
    let residual = stationarity(beta.as_slice(), &grad, lambda);
    let beta: Vec<f64> = beta.iter().copied().collect();
    let fit = LassoFit {
        active_set: support(&beta),
        objective: smooth + lambda * beta.iter().map(|b| b.abs()).sum::<f64>(),
        beta,
        lambda,
        iterations,
        converged: converged || residual < STATIONARITY_TOL,
        trace,
    };
    if fit.converged {
        Ok(fit)
    } else {
        Err(Error::DidNotConverge(Box::new(fit)))
    }
}

/// Rows `√L̈(y_i, x_iᵀβ̂)·x_i`.
fn weighted_design(dataset: &Dataset, beta_hat: &[f64], loss: &LossSpec) -> Result<DMatrix<f64>> {
    let eta = dataset.x() * DVector::from_column_slice(beta_hat);
    let mut xw = dataset.x().clone();
    for i in 0..dataset.n() {
        let w = (loss.d2loss)(dataset.y()[i], eta[i]);
        if !(w > MIN_WEIGHT) {
            return Err(Error::NonPositiveWeight { index: i });
        }
        xw.row_mut(i).scale_mut(w.sqrt());
    }
    Ok(xw)
}

fn check_beta(dataset: &Dataset, beta_hat: &[f64]) -> Result<()> {
    if beta_hat.len() != dataset.p() {
        return Err(Error::DimensionMismatch(format!(
            "coefficient vector has length {}, expected {}",
            beta_hat.len(),
            dataset.p()
        )));
    }
    Ok(())
}

/// Nodewise precision estimate of `Σ̂ = E_n L̈_β̂ xxᵀ` on the weighted design.
pub fn glm_precision(dataset: &Dataset, beta_hat: &[f64], loss: &LossSpec, lambdas: &Lambdas) -> Result<PrecisionEstimate> {
    check_beta(dataset, beta_hat)?;
    let xw = weighted_design(dataset, beta_hat, loss)?;
    let gram = (xw.ncols() <= GRAM_MAX_P).then(|| xw.tr_mul(&xw) / xw.nrows() as f64);
    precision_from_design(&xw, gram.as_ref(), lambdas)
}

/// [`glm_precision`] with one λ chosen by cross-validation on the weighted design.
pub fn glm_precision_cv(dataset: &Dataset, beta_hat: &[f64], loss: &LossSpec, cv: &NodewiseCv) -> Result<PrecisionEstimate> {
    check_beta(dataset, beta_hat)?;
    let xw = weighted_design(dataset, beta_hat, loss)?;
    let gram = xw.tr_mul(&xw) / xw.nrows() as f64;
    let grid = lambda_grid(nodewise_lambda_max(&gram), cv.grid_len, cv.grid_ratio);
    let lambda = shared_cv_lambda_design(&xw, &grid, cv)?;
    let gram = (xw.ncols() <= GRAM_MAX_P).then_some(gram);
    precision_from_design(&xw, gram.as_ref(), &Lambdas::Shared(lambda))
}

#[derive(Debug, Clone)]
pub struct GlmDesparsifiedFit {
    pub beta_breve: Vec<f64>,
    pub beta_hat: Vec<f64>,
    pub precision: Arc<PrecisionEstimate>,
    /// `ŵ_jj = Θ̂_jᵀ(XᵀWX/n)Θ̂_j` with `W = diag(L̇²)` at `β̂`.
    pub w_diag: Vec<f64>,
    /// `κ̂ = −E_n L̇_β̂ x`.
    pub kappa: Vec<f64>,
    /// `L̇(y_i, x_iᵀβ̂)`.
    pub dloss: Vec<f64>,
    /// `XΘ̂ᵀ`.
    pub basis: DMatrix<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlmRecord {
    pub beta_breve: Vec<f64>,
    pub beta_hat: Vec<f64>,
    pub w_diag: Vec<f64>,
}

impl GlmDesparsifiedFit {
    pub fn p(&self) -> usize {
        self.beta_breve.len()
    }

    pub fn record(&self) -> GlmRecord {
        GlmRecord {
            beta_breve: self.beta_breve.clone(),
            beta_hat: self.beta_hat.clone(),
            w_diag: self.w_diag.clone(),
        }
    }
}

/// `β̆ = β̂ − Θ̂·E_n L̇(y_i, x_iᵀβ̂)x_i`.
pub fn glm_desparsify(
    dataset: &Dataset,
    beta_hat: &[f64],
    precision: Arc<PrecisionEstimate>,
    loss: &LossSpec,
) -> Result<GlmDesparsifiedFit> {
    check_beta(dataset, beta_hat)?;
    if precision.p() != dataset.p() {
        return Err(Error::DimensionMismatch(format!(
            "precision estimate has p = {}, dataset has p = {}",
            precision.p(),
            dataset.p()
        )));
    }
    let n = dataset.n();
    let nf = n as f64;
    let eta = dataset.x() * DVector::from_column_slice(beta_hat);
    let dl = loss.derivs(dataset.y(), &eta, loss.dloss);
    let score = dataset.x().tr_mul(&dl) / nf;
    let correction = &precision.theta * &score;
    let beta_breve = beta_hat.iter().zip(correction.iter()).map(|(b, c)| b - c).collect();
    let basis = dataset.x() * precision.theta.transpose();
    let w_diag = basis
        .column_iter()
        .map(|c| c.iter().zip(dl.iter()).map(|(m, d)| (m * d) * (m * d)).sum::<f64>() / nf)
        .collect();
    Ok(GlmDesparsifiedFit {
        beta_breve,
        beta_hat: beta_hat.to_vec(),
        precision,
        w_diag,
        kappa: score.iter().map(|s| -s).collect(),
        dloss: dl.iter().copied().collect(),
        basis,
        n,
    })
}

/// Two-sided multiplier bootstrap with scores `Θ̂_jᵀx_i·L̇_i`, divided by
/// `√ŵ_jj` when studentized.
pub fn glm_bootstrap(
    fit: &GlmDesparsifiedFit,
    group: &[usize],
    draws: usize,
    seed: u64,
    studentized: bool,
) -> Result<BootstrapDistribution> {
    check_group(group, fit.p())?;
    let h = DMatrix::from_fn(fit.n, group.len(), |i, k| {
        let j = group[k];
        let s = fit.basis[(i, j)] * fit.dloss[i];
        if studentized {
            s / fit.w_diag[j].sqrt()
        } else {
            s
        }
    });
    let scores = MultiplierScores::from_observation_scores(&h, group, studentized, draws, seed)?;
    let dist = scores.distribution(true);
    debug_assert_eq!(dist.variant, Variant::new(studentized, true));
    Ok(dist)
}

/// Simultaneous intervals `β̆_j ± c/√n` (or `± c·√(ŵ_jj/n)` when studentized).
pub fn glm_simultaneous_ci(
    fit: &GlmDesparsifiedFit,
    group: &[usize],
    critical: f64,
    studentized: bool,
) -> Result<SimultaneousCi> {
    check_group(group, fit.p())?;
    let nf = fit.n as f64;
    let intervals: Vec<Interval> = group
        .iter()
        .map(|&j| {
            let half = if studentized {
                critical * (fit.w_diag[j] / nf).sqrt()
            } else {
                critical / nf.sqrt()
            };
            Interval {
                index: j,
                lower: fit.beta_breve[j] - half,
                upper: fit.beta_breve[j] + half,
            }
        })
        .collect();
    let width = intervals.iter().map(|iv| iv.upper - iv.lower).sum::<f64>() / intervals.len() as f64;
    Ok(SimultaneousCi { intervals, width })
}
