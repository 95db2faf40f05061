//! De-sparsified Lasso `β̆ = β̂ + Θ̂Xᵀ(y − Xβ̂)/n`, its variances and the
//! remainder diagnostics.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nodewise::PrecisionEstimate;
use crate::solvers::{scaled_lasso_fit, universal_lambda0, LassoFit, NoiseEstimate, ScaledLassoFit};

/// `M = XΘ̂ᵀ` (n × p); column `j` is `XΘ̂_j`. Every per-observation score in
/// the linear model is an entry of this matrix scaled by the noise level.
#[derive(Debug, Clone)]
pub struct ScoreBasis {
    m: DMatrix<f64>,
}

impl ScoreBasis {
    pub fn new(x: &DMatrix<f64>, precision: &PrecisionEstimate) -> Self {
        ScoreBasis {
            m: x * precision.theta.transpose(),
        }
    }

    pub fn from_matrix(m: DMatrix<f64>) -> Self {
        ScoreBasis { m }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn n(&self) -> usize {
        self.m.nrows()
    }

    pub fn p(&self) -> usize {
        self.m.ncols()
    }
}

/// Design-level state shared across responses: the precision estimate and
/// its score basis. Build once per fixed design.
#[derive(Debug, Clone)]
pub struct Debiaser {
    pub precision: Arc<PrecisionEstimate>,
    pub basis: Arc<ScoreBasis>,
}

impl Debiaser {
    pub fn new(dataset: &Dataset, precision: Arc<PrecisionEstimate>) -> Result<Self> {
        if precision.p() != dataset.p() {
            return Err(Error::DimensionMismatch(format!(
                "precision estimate has p = {}, dataset has p = {}",
                precision.p(),
                dataset.p()
            )));
        }
        let basis = Arc::new(ScoreBasis::new(dataset.x(), &precision));
        Ok(Debiaser { precision, basis })
    }

    pub fn fit(&self, dataset: &Dataset, lasso: &LassoFit, sigma_eps_sq: f64) -> Result<DesparsifiedFit> {
        let (n, p) = (dataset.n(), dataset.p());
        if lasso.beta.len() != p || self.basis.p() != p || self.basis.n() != n {
            return Err(Error::DimensionMismatch(format!(
                "dataset {n}×{p}, coefficients {}, score basis {}×{}",
                lasso.beta.len(),
                self.basis.n(),
                self.basis.p()
            )));
        }
        if !(sigma_eps_sq > 0.0) || !sigma_eps_sq.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "noise variance must be > 0, got {sigma_eps_sq}"
            )));
        }
        let nf = n as f64;
        let resid = lasso.residuals(dataset);
        let correction = self.basis.matrix().tr_mul(&resid) / nf;
        let beta_breve = lasso.beta.iter().zip(correction.iter()).map(|(b, c)| b + c).collect();
        let omega_diag = self
            .basis
            .matrix()
            .column_iter()
            .map(|c| sigma_eps_sq * c.norm_squared() / nf)
            .collect();
        Ok(DesparsifiedFit {
            beta_breve,
            beta_hat: lasso.beta.clone(),
            omega_diag,
            sigma_eps_sq,
            delta: None,
            n,
            lasso: lasso.clone(),
            precision: Arc::clone(&self.precision),
            basis: Arc::clone(&self.basis),
        })
    }
}

#[derive(Debug, Clone)]
pub struct DesparsifiedFit {
    pub beta_breve: Vec<f64>,
    pub beta_hat: Vec<f64>,
    /// `ω̂_jj = σ̂²·Θ̂_jᵀΣ̂Θ̂_j`.
    pub omega_diag: Vec<f64>,
    pub sigma_eps_sq: f64,
    /// Remainder `Δ`, filled by [`remainder_diagnostic`] in simulation mode.
    pub delta: Option<Vec<f64>>,
    pub n: usize,
    pub lasso: LassoFit,
    pub precision: Arc<PrecisionEstimate>,
    pub basis: Arc<ScoreBasis>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesparsifiedRecord {
    pub beta_breve: Vec<f64>,
    pub omega_diag: Vec<f64>,
    pub sigma_eps_sq: f64,
}

impl DesparsifiedFit {
    pub fn p(&self) -> usize {
        self.beta_breve.len()
    }

    pub fn record(&self) -> DesparsifiedRecord {
        DesparsifiedRecord {
            beta_breve: self.beta_breve.clone(),
            omega_diag: self.omega_diag.clone(),
            sigma_eps_sq: self.sigma_eps_sq,
        }
    }

    pub(crate) fn check_group(&self, group: &[usize]) -> Result<()> {
        check_group(group, self.p())
    }
}

pub(crate) fn check_group(group: &[usize], p: usize) -> Result<()> {
    if group.is_empty() {
        return Err(Error::EmptyGroup);
    }
    if let Some(&index) = group.iter().find(|&&j| j >= p) {
        return Err(Error::GroupOutOfRange { index, p });
    }
    Ok(())
}

/// De-biases `lasso` with the nodewise `precision` estimate.
pub fn desparsify(
    dataset: &Dataset,
    lasso: &LassoFit,
    precision: Arc<PrecisionEstimate>,
    sigma_eps_sq: f64,
) -> Result<DesparsifiedFit> {
    Debiaser::new(dataset, precision)?.fit(dataset, lasso, sigma_eps_sq)
}

/// Scaled Lasso at the universal `λ₀` followed by de-biasing with the noise
/// variance chosen by `noise`.
pub fn fit_desparsified(
    dataset: &Dataset,
    debiaser: &Debiaser,
    noise: NoiseEstimate,
) -> Result<(ScaledLassoFit, DesparsifiedFit)> {
    let lambda0 = universal_lambda0(dataset.n(), dataset.p())?;
    let sc = scaled_lasso_fit(dataset, lambda0)?;
    let fit = debiaser.fit(dataset, &sc.lasso, sc.sigma_sq(noise))?;
    Ok((sc, fit))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemainderDiagnostic {
    /// `Δ = −√n(Θ̂Σ̂ − I)(β̂ − β⁰)`.
    pub delta: Vec<f64>,
    /// `Δ_j/√ω̂_jj`.
    pub delta_star: Vec<f64>,
    /// `‖√n(β̆ − β⁰) − Θ̂Xᵀ(y − Xβ⁰)/√n − Δ‖∞`; zero up to rounding.
    pub identity_residual: f64,
}

/// Remainder term of the de-sparsified expansion against a known truth.
/// Simulation only: the truth is required.
pub fn remainder_diagnostic(
    fit: &mut DesparsifiedFit,
    dataset: &Dataset,
    beta_true: &[f64],
) -> Result<RemainderDiagnostic> {
    let p = fit.p();
    if beta_true.len() != p || dataset.p() != p || dataset.n() != fit.n {
        return Err(Error::DimensionMismatch("remainder diagnostic inputs".into()));
    }
    let nf = fit.n as f64;
    let root_n = nf.sqrt();
    let m = fit.basis.matrix();
    let diff = DVector::from_iterator(p, fit.beta_hat.iter().zip(beta_true).map(|(a, b)| a - b));
    // Θ̂Σ̂d = Mᵀ(Xd)/n
    let theta_sigma_d = m.tr_mul(&(dataset.x() * &diff)) / nf;
    let delta: Vec<f64> = (0..p).map(|j| -root_n * (theta_sigma_d[j] - diff[j])).collect();
    let delta_star = delta
        .iter()
        .zip(&fit.omega_diag)
        .map(|(d, w)| d / w.sqrt())
        .collect();

    let true_resid = dataset.y() - dataset.x() * DVector::from_column_slice(beta_true);
    let noise_term = m.tr_mul(&true_resid) / root_n;
    let identity_residual = (0..p)
        .map(|j| (root_n * (fit.beta_breve[j] - beta_true[j]) - noise_term[j] - delta[j]).abs())
        .fold(0.0, f64::max);
    fit.delta = Some(delta.clone());
    Ok(RemainderDiagnostic {
        delta,
        delta_star,
        identity_residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    /// 0-based coefficient index.
    pub index: usize,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimultaneousCi {
    pub intervals: Vec<Interval>,
    /// Common width (non-studentized) or mean width over the group (studentized).
    pub width: f64,
}

/// Simultaneous intervals over `group` from a two-sided critical value.
pub fn simultaneous_ci(
    fit: &DesparsifiedFit,
    group: &[usize],
    critical: f64,
    studentized: bool,
) -> Result<SimultaneousCi> {
    fit.check_group(group)?;
    if !(critical >= 0.0) {
        return Err(Error::InvalidArgument(format!("critical value must be >= 0, got {critical}")));
    }
    let root_n = (fit.n as f64).sqrt();
    let intervals: Vec<Interval> = group
        .iter()
        .map(|&j| {
            let half = if studentized {
                critical * (fit.omega_diag[j] / fit.n as f64).sqrt()
            } else {
                critical / root_n
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
