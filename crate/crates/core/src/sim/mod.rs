//! Simulation designs and the Monte Carlo harness.

mod run;

pub use run::{
    run_scenario, run_with_options, CiGroup, MetricRow, RunSpec, Scenario, ScenarioConfig, SummaryTable, Task,
    TaskOptions, TestGroup,
};

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Covariance {
    /// `Σ_ij = ρ^|i−j|`.
    Toeplitz { rho: f64 },
    /// Unit diagonal, `ρ` elsewhere.
    Exchangeable { rho: f64 },
    /// Blocks of size `block` with within-block correlation `ρ`; trailing
    /// columns that do not fill a block are uncorrelated.
    BlockDiagonal {
        rho: f64,
        #[serde(default = "default_block")]
        block: usize,
    },
    Identity,
}

fn default_block() -> usize {
    5
}

impl Covariance {
    pub fn validate(&self) -> Result<()> {
        let rho = match *self {
            Covariance::Toeplitz { rho } | Covariance::Exchangeable { rho } => rho,
            Covariance::BlockDiagonal { rho, block } => {
                if block == 0 {
                    return Err(Error::InvalidScenario("block size must be >= 1".into()));
                }
                rho
            }
            Covariance::Identity => 0.0,
        };
        if !(rho > -1.0 && rho < 1.0) {
            return Err(Error::InvalidScenario(format!("correlation must lie in (-1, 1), got {rho}")));
        }
        Ok(())
    }
}

pub fn make_covariance(spec: &Covariance, p: usize) -> DMatrix<f64> {
    match *spec {
        Covariance::Toeplitz { rho } => {
            DMatrix::from_fn(p, p, |i, j| rho.powi((i as i64 - j as i64).unsigned_abs() as i32))
        }
        Covariance::Exchangeable { rho } => DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { rho }),
        Covariance::BlockDiagonal { rho, block } => {
            let full = (p / block) * block;
            DMatrix::from_fn(p, p, |i, j| {
                if i == j {
                    1.0
                } else if i < full && j < full && i / block == j / block {
                    rho
                } else {
                    0.0
                }
            })
        }
        Covariance::Identity => DMatrix::identity(p, p),
    }
}

/// Lower Cholesky factor, retrying once with a `1e-10` diagonal jitter.
pub fn cholesky_factor(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(c) = sigma.clone().cholesky() {
        return Ok(c.l());
    }
    let p = sigma.nrows();
    let jittered = sigma + DMatrix::identity(p, p) * 1e-10;
    jittered.cholesky().map(|c| c.l()).ok_or(Error::NotPositiveDefinite)
}

/// `n` rows drawn i.i.d. from `N_p(0, Σ)`.
pub fn sample_design(sigma: &DMatrix<f64>, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    let l = cholesky_factor(sigma)?;
    let p = sigma.nrows();
    let z = DMatrix::from_vec(n, p, rng::normals(seed, 0, n * p));
    Ok(z * l.transpose())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorDist {
    /// `t(4)/√2`.
    StudentT4Scaled,
    /// `(Gamma(4, 1) − 4)/2`.
    Gamma41Standardized,
    Gaussian,
}

/// Unit-variance errors.
pub fn sample_errors(dist: ErrorDist, n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, 0);
    match dist {
        ErrorDist::StudentT4Scaled => {
            let t = StudentT::new(4.0).expect("valid degrees of freedom");
            (0..n).map(|_| t.sample(&mut r) / std::f64::consts::SQRT_2).collect()
        }
        ErrorDist::Gamma41Standardized => {
            let g = Gamma::new(4.0, 1.0).expect("valid gamma parameters");
            (0..n).map(|_| (g.sample(&mut r) - 4.0) / 2.0).collect()
        }
        ErrorDist::Gaussian => (0..n).map(|_| rng::standard_normal(&mut r)).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoefPattern {
    /// `Unif[a, b]` on the first `s0` coordinates.
    UnifFirst { a: f64, b: f64 },
    /// `Unif[a, b]` on `s0` coordinates drawn without replacement.
    UnifRandom { a: f64, b: f64 },
    /// A common value on the first `s0` coordinates.
    Fixed { value: f64 },
    /// `scale·√(log(p)/n)` on the first `s0` coordinates.
    RootLogScaled { scale: f64 },
}

/// Coefficient vector and its sorted 0-based support. `n` enters only
/// through [`CoefPattern::RootLogScaled`].
pub fn make_coefficients(pattern: &CoefPattern, n: usize, p: usize, s0: usize, seed: u64) -> Result<(Vec<f64>, Vec<usize>)> {
    if s0 > p {
        return Err(Error::InvalidScenario(format!("s0 = {s0} exceeds p = {p}")));
    }
    let mut r = rng::stream(seed, 0);
    let support: Vec<usize> = match pattern {
        CoefPattern::UnifRandom { .. } => {
            let mut s = index::sample(&mut r, p, s0).into_vec();
            s.sort_unstable();
            s
        }
        _ => (0..s0).collect(),
    };
    let mut beta = vec![0.0; p];
    for &j in &support {
        beta[j] = match *pattern {
            CoefPattern::UnifFirst { a, b } | CoefPattern::UnifRandom { a, b } => a + (b - a) * r.random::<f64>(),
            CoefPattern::Fixed { value } => value,
            CoefPattern::RootLogScaled { scale } => scale * ((p as f64).ln() / n as f64).sqrt(),
        };
    }
    Ok((beta, support))
}

/// `y = Xβ + ε`.
pub fn response(x: &DMatrix<f64>, beta: &[f64], errors: &[f64]) -> DVector<f64> {
    x * DVector::from_column_slice(beta) + DVector::from_column_slice(errors)
}

/// Bernoulli responses with `P(y_i = 1) = 1/(1 + exp(−x_iᵀβ))`.
pub fn logistic_response(x: &DMatrix<f64>, beta: &[f64], seed: u64) -> DVector<f64> {
    let eta = x * DVector::from_column_slice(beta);
    let mut g = rng::stream(seed, 0);
    eta.map(|a| {
        let u = rng::open_uniform(&mut g);
        if u < 1.0 / (1.0 + (-a).exp()) {
            1.0
        } else {
            0.0
        }
    })
}
