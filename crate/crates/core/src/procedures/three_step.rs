use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::screening::{iterative_screen, marginal_screen, split_sample, ScreenMode, ScreenSize};
use crate::bootstrap::{multiplier_bootstrap, simultaneous_test, TestOutcome, Variant, DEFAULT_DRAWS};
use crate::dataset::{standardize, Dataset};
use crate::desparsify::{check_group, fit_desparsified, Debiaser, DesparsifiedFit};
use crate::error::{check_alpha, Error, Result};
use crate::nodewise::{precision_estimate, precision_with_cv, Lambdas, NodewiseCv, PrecisionCache, PrecisionEstimate};
use crate::rng;
use crate::solvers::NoiseEstimate;

/// How the nodewise penalties are chosen on a freshly fitted sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodewiseTuning {
    /// Shared λ by cross-validation; the seed field is overridden per call.
    Cv { folds: usize, grid_len: usize, grid_ratio: f64, subsample: Option<usize> },
    Fixed { lambda: f64 },
}

impl Default for NodewiseTuning {
    fn default() -> Self {
        let d = NodewiseCv::default();
        NodewiseTuning::Cv {
            folds: d.folds,
            grid_len: d.grid_len,
            grid_ratio: d.grid_ratio,
            subsample: d.subsample,
        }
    }
}

impl NodewiseTuning {
    pub fn estimate(&self, dataset: &Dataset, seed: u64) -> Result<PrecisionEstimate> {
        match *self {
            NodewiseTuning::Cv {
                folds,
                grid_len,
                grid_ratio,
                subsample,
            } => {
                let folds = folds.min(dataset.n());
                precision_with_cv(
                    dataset,
                    &NodewiseCv {
                        folds,
                        grid_len,
                        grid_ratio,
                        subsample,
                        seed,
                    },
                )
            }
            NodewiseTuning::Fixed { lambda } => precision_estimate(dataset, &Lambdas::Shared(lambda)),
        }
    }

    /// As [`estimate`](Self::estimate), going through `cache` when given. A
    /// fixed λ is looked up before fitting; a cross-validated fit is only
    /// stored.
    pub fn estimate_cached(&self, dataset: &Dataset, seed: u64, cache: Option<&PrecisionCache>) -> Result<PrecisionEstimate> {
        match (cache, *self) {
            (None, _) => self.estimate(dataset, seed),
            (Some(cache), NodewiseTuning::Fixed { lambda }) => cache.get_or_compute(dataset, &Lambdas::Shared(lambda)),
            (Some(cache), NodewiseTuning::Cv { .. }) => {
                let est = self.estimate(dataset, seed)?;
                cache.store(dataset, &est)?;
                Ok(est)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThreeStepOptions {
    pub alpha: f64,
    pub c0: f64,
    pub screen: ScreenMode,
    pub size: ScreenSize,
    /// First-stage size for iterative screening; `⌊k/2⌋` when absent.
    pub k1: Option<usize>,
    pub studentized: bool,
    pub draws: usize,
    pub seed: u64,
    pub nodewise: NodewiseTuning,
    pub noise: NoiseEstimate,
}

impl Default for ThreeStepOptions {
    fn default() -> Self {
        ThreeStepOptions {
            alpha: 0.05,
            c0: 0.2,
            screen: ScreenMode::Marginal,
            size: ScreenSize::SampleMinusOne,
            k1: None,
            studentized: false,
            draws: DEFAULT_DRAWS,
            seed: 0,
            nodewise: NodewiseTuning::default(),
            noise: NoiseEstimate::Modified,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreeStepOutcome {
    pub reject: bool,
    /// `G̃ ∩ S_γ` in original column indices.
    pub reduced_group: Vec<usize>,
    /// `S_γ` in original column indices.
    pub screened: Vec<usize>,
    pub statistic: f64,
    pub critical: f64,
    pub p_value: f64,
    pub d1: Vec<usize>,
    pub d2: Vec<usize>,
}

/// Screens `dataset` to `k` columns with the chosen rule.
pub(crate) fn screen(dataset: &Dataset, k: usize, mode: ScreenMode, k1: Option<usize>) -> Result<Vec<usize>> {
    match mode {
        ScreenMode::Marginal => marginal_screen(dataset, k),
        ScreenMode::Iterative => iterative_screen(dataset, k, k1.unwrap_or(k / 2).min(k.saturating_sub(1))),
    }
}

/// The sample split, the screened submodel and the de-sparsified fit on
/// `D₂` restricted to it. Reusable across candidate groups.
#[derive(Debug, Clone)]
pub struct ScreenedFit {
    pub d1: Vec<usize>,
    pub d2: Vec<usize>,
    /// `S_γ` in original column indices, sorted.
    pub screened: Vec<usize>,
    /// Sd of each screened column over `D₂`; coefficients scale by it.
    pub scales: Vec<f64>,
    pub fit: DesparsifiedFit,
}

impl ScreenedFit {
    /// Split, screen on `D₁` only, then fit on `D₂` only. `dataset` must be
    /// standardized.
    pub fn new(dataset: &Dataset, opts: &ThreeStepOptions) -> Result<Self> {
        if !dataset.is_standardized() {
            return Err(Error::InvalidArgument("three-step test requires a standardized dataset".into()));
        }
        let (d1, d2) = split_sample(dataset.n(), opts.c0, rng::derive_seed(opts.seed, &[0]))?;
        let k = opts.size.size(d2.len());
        let screened = {
            let first = standardize(&dataset.select_rows(&d1)?)?;
            screen(&first, k, opts.screen, opts.k1)?
        };
        // Row selection drops the scale metadata, so `column_sds` of the
        // re-standardized data is each column's sd over D₂.
        let second = standardize(&dataset.select_rows(&d2)?.select_columns(&screened)?)?;
        let scales = second.column_sds().to_vec();
        let precision = Arc::new(opts.nodewise.estimate(&second, rng::derive_seed(opts.seed, &[1]))?);
        let debiaser = Debiaser::new(&second, precision)?;
        let (_, fit) = fit_desparsified(&second, &debiaser, opts.noise)?;
        Ok(ScreenedFit {
            d1,
            d2,
            screened,
            scales,
            fit,
        })
    }

    /// Tests `H₀: β_j = β̃_j, j ∈ G̃ ∩ S_γ`; `beta_tilde` is on the scale of
    /// the full standardized dataset.
    pub fn test(
        &self,
        beta_tilde: &[f64],
        candidates: &[usize],
        alpha: f64,
        studentized: bool,
        draws: usize,
        seed: u64,
    ) -> Result<ThreeStepOutcome> {
        check_alpha(alpha)?;
        if candidates.is_empty() {
            return Err(Error::EmptyGroup);
        }
        let reduced_group: Vec<usize> =
            candidates.iter().copied().filter(|j| self.screened.binary_search(j).is_ok()).collect();
        let mut outcome = ThreeStepOutcome {
            reject: false,
            reduced_group,
            screened: self.screened.clone(),
            statistic: 0.0,
            critical: f64::NAN,
            p_value: 1.0,
            d1: self.d1.clone(),
            d2: self.d2.clone(),
        };
        if outcome.reduced_group.is_empty() {
            return Ok(outcome);
        }
        let tilde: Vec<f64> = self
            .screened
            .iter()
            .zip(&self.scales)
            .map(|(&j, &sd)| beta_tilde[j] * sd)
            .collect();
        let local: Vec<usize> = outcome
            .reduced_group
            .iter()
            .map(|j| self.screened.binary_search(j).expect("screened member"))
            .collect();
        let t = one_step_test(&self.fit, &tilde, &local, alpha, Variant::new(studentized, true), draws, seed)?;
        outcome.reject = t.reject;
        outcome.statistic = t.statistic;
        outcome.critical = t.critical;
        outcome.p_value = t.p_value;
        Ok(outcome)
    }
}

/// Split, screen on `D₁`, then test `H₀: β_j = β̃_j, j ∈ G̃ ∩ S_γ` on `D₂`
/// restricted to the screened columns. `dataset` must be standardized and
/// `beta_tilde` is on its scale.
pub fn three_step_test(
    dataset: &Dataset,
    beta_tilde: &[f64],
    candidates: &[usize],
    opts: &ThreeStepOptions,
) -> Result<ThreeStepOutcome> {
    check_alpha(opts.alpha)?;
    check_group(candidates, dataset.p())?;
    if beta_tilde.len() != dataset.p() {
        return Err(Error::DimensionMismatch(format!(
            "null vector has length {}, expected {}",
            beta_tilde.len(),
            dataset.p()
        )));
    }
    ScreenedFit::new(dataset, opts)?.test(
        beta_tilde,
        candidates,
        opts.alpha,
        opts.studentized,
        opts.draws,
        rng::derive_seed(opts.seed, &[2]),
    )
}

/// Bootstrap test of `H₀: β_j = β̃_j, j ∈ G` on a full-sample fit.
pub fn one_step_test(
    fit: &DesparsifiedFit,
    beta_tilde: &[f64],
    group: &[usize],
    alpha: f64,
    variant: Variant,
    draws: usize,
    seed: u64,
) -> Result<TestOutcome> {
    let dist = multiplier_bootstrap(fit, group, variant, draws, seed)?;
    simultaneous_test(fit, beta_tilde, group, &dist, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{make_covariance, response, sample_design, Covariance};

    fn data(n: usize, p: usize, signal: f64, seed: u64) -> Dataset {
        let x = sample_design(&make_covariance(&Covariance::Toeplitz { rho: 0.5 }, p), n, seed).unwrap();
        let x = standardize(&Dataset::new(x, nalgebra::DVector::zeros(n)).unwrap()).unwrap();
        let mut beta = vec![0.0; p];
        beta[0] = signal;
        beta[1] = signal;
        let y = response(x.x(), &beta, &rng::normals(seed, 9, n));
        standardize(&x.with_response(y).unwrap()).unwrap()
    }

    fn opts(seed: u64) -> ThreeStepOptions {
        ThreeStepOptions {
            draws: 300,
            seed,
            nodewise: NodewiseTuning::Fixed { lambda: 0.2 },
            ..ThreeStepOptions::default()
        }
    }

    #[test]
    fn unscreened_candidates_are_not_rejected() {
        let ds = data(100, 150, 3.0, 1);
        let sf = ScreenedFit::new(&ds, &opts(1)).unwrap();
        assert_eq!(sf.screened.len(), 79);
        let outside: Vec<usize> = (0..150).filter(|j| sf.screened.binary_search(j).is_err()).take(5).collect();
        let out = sf.test(&vec![0.0; 150], &outside, 0.05, false, 300, 1).unwrap();
        assert!(!out.reject);
        assert_eq!(out.statistic, 0.0);
        assert!(out.reduced_group.is_empty());
    }

    #[test]
    fn strong_signal_is_detected_and_split_is_disjoint() {
        let ds = data(100, 150, 3.0, 2);
        let out = three_step_test(&ds, &vec![0.0; 150], &[0, 1, 2, 3], &opts(2)).unwrap();
        assert!(out.screened.contains(&0) && out.screened.contains(&1));
        assert!(out.reject);
        assert!(out.d1.iter().all(|i| out.d2.binary_search(i).is_err()));
        assert_eq!(out.d1.len() + out.d2.len(), 100);
    }

    #[test]
    fn deterministic_under_seed() {
        let ds = data(100, 120, 0.5, 3);
        let g: Vec<usize> = (2..120).collect();
        let a = three_step_test(&ds, &vec![0.0; 120], &g, &opts(5)).unwrap();
        let b = three_step_test(&ds, &vec![0.0; 120], &g, &opts(5)).unwrap();
        assert_eq!(a, b);
    }
}
