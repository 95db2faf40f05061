use serde::{Deserialize, Serialize};

use crate::bootstrap::{max_statistic, MultiplierScores, Variant};
use crate::desparsify::{check_group, DesparsifiedFit};
use crate::error::{check_alpha, Result};
use crate::special::norm_sf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sided {
    One,
    #[default]
    Two,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    /// Hypotheses still active at this step.
    pub active: Vec<usize>,
    pub critical: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepdownResult {
    /// Sorted 0-based indices of rejected hypotheses.
    pub rejected: Vec<usize>,
    pub steps: Vec<Step>,
    pub alpha: f64,
}

/// Romano–Wolf step-down over `H_{0,j}: β_j = β̃_j`, `j ∈ G`. All critical
/// values come from one set of multipliers so they cannot increase as the
/// active set shrinks.
#[allow(clippy::too_many_arguments)]
pub fn stepdown_fwer(
    fit: &DesparsifiedFit,
    beta_tilde: &[f64],
    group: &[usize],
    alpha: f64,
    draws: usize,
    seed: u64,
    sided: Sided,
    studentized: bool,
) -> Result<StepdownResult> {
    check_alpha(alpha)?;
    check_group(group, fit.p())?;
    let two_sided = sided == Sided::Two;
    let variant = Variant::new(studentized, two_sided);
    let stats: Vec<f64> = group
        .iter()
        .map(|&j| max_statistic(fit, beta_tilde, &[j], variant))
        .collect::<Result<_>>()?;
    let scores = MultiplierScores::linear(fit, group, studentized, draws, seed)?;

    let mut active: Vec<usize> = (0..group.len()).collect();
    let mut rejected = Vec::new();
    let mut steps = Vec::new();
    while !active.is_empty() {
        let maxima = scores.replicate_maxima(&active, two_sided);
        let dist = crate::bootstrap::BootstrapDistribution::new(maxima, variant, Vec::new(), seed);
        let critical = dist.critical_value(alpha)?;
        if let Some(prev) = steps.last().map(|s: &Step| s.critical) {
            debug_assert!(critical <= prev);
        }
        steps.push(Step {
            active: active.iter().map(|&k| group[k]).collect(),
            critical,
        });
        let (hit, keep): (Vec<usize>, Vec<usize>) = active.iter().partition(|&&k| stats[k] > critical);
        if hit.is_empty() {
            break;
        }
        rejected.extend(hit.iter().map(|&k| group[k]));
        active = keep;
    }
    rejected.sort_unstable();
    Ok(StepdownResult {
        rejected,
        steps,
        alpha,
    })
}

/// Holm's procedure on Gaussian two-sided p-values of the studentized
/// statistics `√n|β̆_j − β̃_j|/√ω̂_jj`.
pub fn bonferroni_holm(fit: &DesparsifiedFit, beta_tilde: &[f64], group: &[usize], alpha: f64) -> Result<Vec<usize>> {
    check_alpha(alpha)?;
    if group.is_empty() {
        return Ok(Vec::new());
    }
    check_group(group, fit.p())?;
    let mut pv: Vec<(f64, usize)> = group
        .iter()
        .map(|&j| {
            let z = max_statistic(fit, beta_tilde, &[j], Variant::StTwoSided)?;
            Ok((2.0 * norm_sf(z), j))
        })
        .collect::<Result<_>>()?;
    pv.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let m = pv.len();
    let mut rejected = Vec::new();
    for (k, &(p, j)) in pv.iter().enumerate() {
        if p > alpha / (m - k) as f64 {
            break;
        }
        rejected.push(j);
    }
    rejected.sort_unstable();
    Ok(rejected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bootstrap::{multiplier_bootstrap, simultaneous_test};
    use crate::test_support::toy_fit;

    #[test]
    fn single_hypothesis_matches_simultaneous_test() {
        let fit = toy_fit(30, 5, 1);
        for shift in [0.0, 0.2, 0.5, 1.0] {
            let tilde: Vec<f64> = fit.beta_breve.iter().map(|b| b - shift).collect();
            let sd = stepdown_fwer(&fit, &tilde, &[2], 0.05, 500, 3, Sided::Two, false).unwrap();
            let dist = multiplier_bootstrap(&fit, &[2], Variant::NstTwoSided, 500, 3).unwrap();
            let t = simultaneous_test(&fit, &tilde, &[2], &dist, 0.05).unwrap();
            assert_eq!(sd.rejected.len() == 1, t.reject);
            assert_eq!(sd.steps[0].critical, t.critical);
        }
    }

    #[test]
    fn nothing_rejected_in_one_step() {
        let fit = toy_fit(30, 8, 2);
        let g: Vec<usize> = (0..8).collect();
        let r = stepdown_fwer(&fit, &fit.beta_breve.clone(), &g, 0.05, 300, 1, Sided::Two, true).unwrap();
        assert!(r.rejected.is_empty());
        assert_eq!(r.steps.len(), 1);
    }

    #[test]
    fn critical_values_shrink_and_first_step_is_contained() {
        let fit = toy_fit(40, 30, 3);
        let g: Vec<usize> = (0..30).collect();
        let mut tilde = fit.beta_breve.clone();
        for (j, t) in tilde.iter_mut().enumerate().take(12) {
            *t -= 0.08 * (j + 1) as f64;
        }
        for sided in [Sided::One, Sided::Two] {
            for studentized in [false, true] {
                let r = stepdown_fwer(&fit, &tilde, &g, 0.05, 400, 9, sided, studentized).unwrap();
                assert!(r.steps.windows(2).all(|w| w[1].critical <= w[0].critical));
                let first = r.steps[0].critical;
                let variant = Variant::new(studentized, sided == Sided::Two);
                for &j in &g {
                    let t = max_statistic(&fit, &tilde, &[j], variant).unwrap();
                    if t > first {
                        assert!(r.rejected.contains(&j));
                    }
                }
                let last = &r.steps.last().unwrap().active;
                assert!(r.rejected.iter().all(|j| !last.contains(j)) || r.rejected.len() == g.len());
            }
        }
    }

    #[test]
    fn holm_cases() {
        let fit = toy_fit(30, 4, 4);
        assert!(bonferroni_holm(&fit, &fit.beta_breve.clone(), &[], 0.05).unwrap().is_empty());
        // A single hypothesis is a plain two-sided z-test.
        for shift in [0.1, 0.3, 0.6, 1.2] {
            let tilde: Vec<f64> = fit.beta_breve.iter().map(|b| b + shift).collect();
            let z = (30f64).sqrt() * shift / fit.omega_diag[1].sqrt();
            let rej = bonferroni_holm(&fit, &tilde, &[1], 0.05).unwrap();
            assert_eq!(!rej.is_empty(), z > 1.959963984540054);
        }
    }
}
