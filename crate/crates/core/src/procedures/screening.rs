use nalgebra::DVector;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{standardize, Dataset};
use crate::error::{Error, Result};
use crate::rng;
use crate::solvers::{scaled_lasso_fit, universal_lambda0};

const MIN_SPLIT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScreenMode {
    #[default]
    Marginal,
    Iterative,
}

/// Size of the screened submodel as a function of `|D₂|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScreenSize {
    /// `|D₂| − 1`.
    #[default]
    SampleMinusOne,
    /// `⌊|D₂|/log|D₂|⌋`.
    SampleOverLog,
}

impl ScreenSize {
    pub fn size(self, n2: usize) -> usize {
        match self {
            ScreenSize::SampleMinusOne => n2.saturating_sub(1).max(1),
            ScreenSize::SampleOverLog => ((n2 as f64 / (n2 as f64).ln()).floor() as usize).max(1),
        }
    }
}

/// Seeded split into `D₁` of size `⌊c₀n⌋` and its complement, both sorted.
pub fn split_sample(n: usize, c0: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(c0 > 0.0 && c0 < 1.0) {
        return Err(Error::InvalidArgument(format!("c0 must lie in (0, 1), got {c0}")));
    }
    let n1 = (c0 * n as f64).floor() as usize;
    let smaller = n1.min(n - n1);
    if smaller < MIN_SPLIT {
        return Err(Error::DegenerateSplit { smaller });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, 0));
    let mut d1 = order[..n1].to_vec();
    let mut d2 = order[n1..].to_vec();
    d1.sort_unstable();
    d2.sort_unstable();
    Ok((d1, d2))
}

/// Columns ranked by `|w_j|` descending, smaller index first on ties.
fn rank_by_magnitude(w: &[f64], columns: &[usize]) -> Vec<usize> {
    let mut ranked = columns.to_vec();
    ranked.sort_by(|&a, &b| w[b].abs().total_cmp(&w[a].abs()).then(a.cmp(&b)));
    ranked
}

fn top_k(w: &[f64], columns: &[usize], k: usize) -> Vec<usize> {
    let mut top: Vec<usize> = rank_by_magnitude(w, columns).into_iter().take(k).collect();
    top.sort_unstable();
    top
}

fn correlations(dataset: &Dataset, response: &DVector<f64>) -> Vec<f64> {
    dataset.x().tr_mul(response).iter().copied().collect()
}

/// Indices of the `k` largest `|X_jᵀY|`, sorted.
pub fn marginal_screen(dataset: &Dataset, k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::InvalidArgument("screening size must be >= 1".into()));
    }
    let all: Vec<usize> = (0..dataset.p()).collect();
    Ok(top_k(&correlations(dataset, dataset.y()), &all, k))
}

/// Lasso-then-residual screening. `B₁` holds the `k1` largest scaled-Lasso
/// coefficients (padded by marginal correlation when fewer are active);
/// `B₂` screens the Lasso residuals on the remaining columns.
pub fn iterative_screen(dataset: &Dataset, k: usize, k1: usize) -> Result<Vec<usize>> {
    if k == 0 || k1 >= k {
        return Err(Error::InvalidArgument(format!(
            "iterative screening needs 0 <= k1 < k, got k = {k}, k1 = {k1}"
        )));
    }
    let p = dataset.p();
    if k >= p {
        return Ok((0..p).collect());
    }
    if k1 == 0 {
        return marginal_screen(dataset, k);
    }
    let ds = if dataset.is_standardized() {
        dataset.clone()
    } else {
        standardize(dataset)?
    };
    let sc = scaled_lasso_fit(&ds, universal_lambda0(ds.n(), p)?)?;
    let beta = &sc.beta_sc;

    let mut b1: Vec<usize> = rank_by_magnitude(beta, &sc.lasso.active_set)
        .into_iter()
        .take(k1)
        .collect();
    if b1.len() < k1 {
        let rest: Vec<usize> = (0..p).filter(|j| !b1.contains(j)).collect();
        let w = correlations(&ds, ds.y());
        b1.extend(rank_by_magnitude(&w, &rest).into_iter().take(k1 - b1.len()));
    }
    let resid = sc.lasso.residuals(&ds);
    let rest: Vec<usize> = (0..p).filter(|j| !b1.contains(j)).collect();
    let w = correlations(&ds, &resid);
    let mut b = b1;
    b.extend(rank_by_magnitude(&w, &rest).into_iter().take(k - b.len()));
    b.sort_unstable();
    Ok(b)
}
