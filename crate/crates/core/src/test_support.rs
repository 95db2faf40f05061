//! Hand-built fits for unit tests.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::desparsify::{DesparsifiedFit, ScoreBasis};
use crate::nodewise::PrecisionEstimate;
use crate::rng;
use crate::solvers::LassoFit;

/// A fit whose score basis is `m`; `ω̂` follows from `m` and `σ²`.
pub fn fit_from_basis(m: DMatrix<f64>, beta_breve: Vec<f64>, sigma_eps_sq: f64) -> DesparsifiedFit {
    let (n, p) = m.shape();
    let omega_diag = m.column_iter().map(|c| sigma_eps_sq * c.norm_squared() / n as f64).collect();
    DesparsifiedFit {
        beta_hat: beta_breve.clone(),
        beta_breve,
        omega_diag,
        sigma_eps_sq,
        delta: None,
        n,
        lasso: LassoFit {
            beta: vec![0.0; p],
            lambda: 0.0,
            active_set: Vec::new(),
            objective: 0.0,
            iterations: 0,
            converged: true,
            trace: Vec::new(),
        },
        precision: Arc::new(PrecisionEstimate {
            theta: DMatrix::identity(p, p),
            tau_sq: vec![1.0; p],
            lambdas: vec![0.0; p],
            gammas: vec![Vec::new(); p],
        }),
        basis: Arc::new(ScoreBasis::from_matrix(m)),
    }
}

/// Gaussian score basis with `n` rows around the given estimates.
pub fn fit_with(beta_breve: Vec<f64>, n: usize) -> DesparsifiedFit {
    let p = beta_breve.len();
    let m = DMatrix::from_vec(n, p, rng::normals(4242, 0, n * p));
    fit_from_basis(m, beta_breve, 1.0)
}

pub fn toy_fit(n: usize, p: usize, seed: u64) -> DesparsifiedFit {
    let m = DMatrix::from_vec(n, p, rng::normals(seed, 0, n * p));
    fit_from_basis(m, rng::normals(seed, 1, p), 1.3)
}
