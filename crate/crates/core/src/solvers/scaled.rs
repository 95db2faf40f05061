//! Scaled Lasso: joint estimation of coefficients and noise level.

use serde::{Deserialize, Serialize};

use super::lasso::{lasso_fit, LassoFit};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::special::norm_quantile;

const SIGMA_TOL: f64 = 1e-8;
const MAX_OUTER: usize = 100;
const K0_TOL: f64 = 1e-10;
const K0_MAX_STEPS: usize = 500;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScaledLassoFit {
    pub beta_sc: Vec<f64>,
    /// Noise level from the joint iteration.
    pub sigma_hat: f64,
    /// `√(‖y − Xβ̂‖² / (n − df))`.
    pub sigma_hat_modified: f64,
    pub lambda0: f64,
    pub df: usize,
    pub outer_iterations: usize,
    /// Final β-step, at penalty `sigma·lambda0` for the last σ used.
    pub lasso: LassoFit,
}

impl ScaledLassoFit {
    pub fn sigma_sq(&self, source: NoiseEstimate) -> f64 {
        match source {
            NoiseEstimate::Modified => self.sigma_hat_modified.powi(2),
            NoiseEstimate::Scaled => self.sigma_hat.powi(2),
        }
    }
}

/// Which noise-variance estimate feeds the de-biased inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseEstimate {
    /// Residual sum of squares over `n − ‖β̂‖₀`.
    #[default]
    Modified,
    Scaled,
}

/// `L̃₁(t) = Φ⁻¹(1 − t)`.
fn l1_tilde(t: f64) -> f64 {
    norm_quantile(1.0 - t)
}

/// Solves `k = L̃₁⁴(k/p) + 2L̃₁²(k/p)` by damped fixed-point iteration.
pub fn universal_k0(p: usize) -> Result<f64> {
    if p < 2 {
        return Err(Error::InvalidArgument(format!("universal lambda needs p >= 2, got {p}")));
    }
    let pf = p as f64;
    let map = |k: f64| {
        let l = l1_tilde(k / pf);
        let l2 = l * l;
        l2 * l2 + 2.0 * l2
    };
    let lo = 1e-9 * pf;
    let hi = pf * (1.0 - 1e-9);
    let mut k = 1.0f64.clamp(lo, hi);
    for _ in 0..K0_MAX_STEPS {
        let next = (0.5 * k + 0.5 * map(k)).clamp(lo, hi);
        if (next - k).abs() < K0_TOL {
            return Ok(next);
        }
        k = next;
    }
    Err(Error::NoFixedPoint { last: k })
}

/// `λ₀ = √2·L̃ₙ(k₀/p)` with `L̃ₙ(t) = n^{-1/2}Φ⁻¹(1 − t)`.
pub fn universal_lambda0(n: usize, p: usize) -> Result<f64> {
    if n < 1 {
        return Err(Error::InvalidArgument("universal lambda needs n >= 1".into()));
    }
    let k0 = universal_k0(p)?;
    Ok(std::f64::consts::SQRT_2 * l1_tilde(k0 / p as f64) / (n as f64).sqrt())
}

/// Alternates a Lasso step at penalty `σ·λ₀` with `σ² ← ‖y − Xβ‖²/n`.
pub fn scaled_lasso_fit(dataset: &Dataset, lambda0: f64) -> Result<ScaledLassoFit> {
    if !dataset.is_standardized() {
        return Err(Error::InvalidArgument(
            "scaled Lasso requires a standardized dataset".into(),
        ));
    }
    if !(lambda0 > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda0 must be > 0, got {lambda0}")));
    }
    let n = dataset.n();
    let nf = n as f64;
    let mut sigma = (dataset.y().norm_squared() / nf).sqrt();
    if sigma * sigma < 1e-12 {
        return Err(Error::DegenerateVariance {
            sigma_sq: sigma * sigma,
        });
    }
    let mut warm: Option<Vec<f64>> = None;
    let mut outer = 0;
    let (fit, rss) = loop {
        // A sweep-capped step is kept; `lasso.converged` reports it.
        let fit = match lasso_fit(dataset, sigma * lambda0, warm.as_deref()) {
            Ok(fit) => fit,
            Err(Error::DidNotConverge(partial)) => {
                log::warn!("scaled Lasso step at lambda = {:e} hit the sweep limit", sigma * lambda0);
                *partial
            }
            Err(e) => return Err(e),
        };
        let rss = fit.residuals(dataset).norm_squared();
        let sigma_sq = rss / nf;
        if sigma_sq < 1e-12 {
            return Err(Error::DegenerateVariance { sigma_sq });
        }
        let next = sigma_sq.sqrt();
        outer += 1;
        let done = (next - sigma).abs() < SIGMA_TOL || outer >= MAX_OUTER;
        sigma = next;
        if done {
            break (fit, rss);
        }
        warm = Some(fit.beta.clone());
    };
    let df = fit.active_set.len();
    if df >= n {
        return Err(Error::SaturatedFit { df, n });
    }
    Ok(ScaledLassoFit {
        beta_sc: fit.beta.clone(),
        sigma_hat: sigma,
        sigma_hat_modified: (rss / (n - df) as f64).sqrt(),
        lambda0,
        df,
        outer_iterations: outer,
        lasso: fit,
    })
}
