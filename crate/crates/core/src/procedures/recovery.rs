use serde::{Deserialize, Serialize};

use crate::desparsify::{check_group, DesparsifiedFit};
use crate::error::{Error, Result};

pub const DEFAULT_TAU: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryResult {
    /// Sorted 0-based indices.
    pub selected: Vec<usize>,
    pub tau: f64,
    /// `λ*_j(τ)` for each candidate, in candidate order.
    pub thresholds: Vec<f64>,
}

/// Keeps candidates with `|β̆_j| > √(τ·ω̂_jj·log(p)/n)`, `p` the full dimension.
pub fn support_recover(fit: &DesparsifiedFit, candidates: &[usize], tau: f64) -> Result<RecoveryResult> {
    check_group(candidates, fit.p())?;
    if !(tau >= 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be >= 0, got {tau}")));
    }
    let scale = (fit.p() as f64).ln() / fit.n as f64;
    let thresholds: Vec<f64> = candidates
        .iter()
        .map(|&j| (tau * fit.omega_diag[j] * scale).sqrt())
        .collect();
    let mut selected: Vec<usize> = candidates
        .iter()
        .zip(&thresholds)
        .filter(|(&j, &t)| fit.beta_breve[j].abs() > t)
        .map(|(&j, _)| j)
        .collect();
    selected.sort_unstable();
    selected.dedup();
    Ok(RecoveryResult {
        selected,
        tau,
        thresholds,
    })
}

/// `|Ŝ ∩ S|/√(|Ŝ|·|S|)`, zero when `Ŝ` is empty.
pub fn similarity(selected: &[usize], truth: &[usize]) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::EmptyTruth);
    }
    if selected.is_empty() {
        return Ok(0.0);
    }
    let overlap = selected.iter().filter(|j| truth.contains(j)).count();
    Ok(overlap as f64 / ((selected.len() * truth.len()) as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_support::fit_with;

    #[test]
    fn similarity_cases() {
        assert_eq!(similarity(&[1, 2, 3], &[3, 2, 1]).unwrap(), 1.0);
        assert_eq!(similarity(&[4, 5], &[1, 2]).unwrap(), 0.0);
        assert_eq!(similarity(&[], &[1]).unwrap(), 0.0);
        assert!((similarity(&[1, 2, 3, 9], &[1, 2, 3]).unwrap() - 3.0 / 12f64.sqrt()).abs() < 1e-15);
        assert!(matches!(similarity(&[1], &[]), Err(Error::EmptyTruth)));
    }

    #[test]
    fn thresholds_and_monotonicity() {
        let fit = fit_with(vec![0.0, 0.3, -0.01, 2.0, 0.0, -0.6], 50);
        let all: Vec<usize> = (0..6).collect();
        let zero = support_recover(&fit, &all, 0.0).unwrap();
        assert_eq!(zero.selected, vec![1, 2, 3, 5]);
        let mut prev = zero.selected.clone();
        for tau in [0.5, 1.0, 2.0, 4.0, 16.0] {
            let r = support_recover(&fit, &all, tau).unwrap();
            assert!(r.selected.iter().all(|j| prev.contains(j)));
            for (k, &j) in all.iter().enumerate() {
                let t = (tau * fit.omega_diag[j] * (6f64).ln() / 50.0).sqrt();
                assert!((r.thresholds[k] - t).abs() < 1e-15);
            }
            prev = r.selected;
        }
        let empty = fit_with(vec![0.0; 6], 50);
        assert!(support_recover(&empty, &all, 1e-3).unwrap().selected.is_empty());
    }
}
