//! Multiplier and empirical bootstrap for max-type statistics.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{read_f64s, read_u64};
use crate::desparsify::{check_group, DesparsifiedFit};
use crate::error::{check_alpha, Error, Result};
use crate::rng;

pub const DEFAULT_DRAWS: usize = 1000;
const MIN_DRAWS: usize = 100;
const MAGIC: &[u8; 8] = b"HDBOOT01";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    NstOneSided,
    NstTwoSided,
    StOneSided,
    StTwoSided,
}

impl Variant {
    pub fn new(studentized: bool, two_sided: bool) -> Self {
        match (studentized, two_sided) {
            (false, false) => Variant::NstOneSided,
            (false, true) => Variant::NstTwoSided,
            (true, false) => Variant::StOneSided,
            (true, true) => Variant::StTwoSided,
        }
    }

    pub fn studentized(self) -> bool {
        matches!(self, Variant::StOneSided | Variant::StTwoSided)
    }

    pub fn two_sided(self) -> bool {
        matches!(self, Variant::NstTwoSided | Variant::StTwoSided)
    }

    fn code(self) -> u64 {
        match self {
            Variant::NstOneSided => 0,
            Variant::NstTwoSided => 1,
            Variant::StOneSided => 2,
            Variant::StTwoSided => 3,
        }
    }

    fn from_code(c: u64) -> Result<Self> {
        Ok(match c {
            0 => Variant::NstOneSided,
            1 => Variant::NstTwoSided,
            2 => Variant::StOneSided,
            3 => Variant::StTwoSided,
            _ => return Err(Error::Parse(format!("unknown bootstrap variant code {c}"))),
        })
    }
}

/// Sorted bootstrap draws of a max statistic over `group`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapDistribution {
    pub draws: Vec<f64>,
    pub variant: Variant,
    pub group: Vec<usize>,
    pub seed: u64,
}

impl BootstrapDistribution {
    pub fn new(mut draws: Vec<f64>, variant: Variant, group: Vec<usize>, seed: u64) -> Self {
        draws.sort_by(f64::total_cmp);
        BootstrapDistribution {
            draws,
            variant,
            group,
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// The `⌈(1−α)B⌉`-th order statistic.
    pub fn critical_value(&self, alpha: f64) -> Result<f64> {
        check_alpha(alpha)?;
        Ok(self.draws[quantile_rank(alpha, self.len()) - 1])
    }

    /// Fraction of draws at or above `statistic`.
    pub fn p_value(&self, statistic: f64) -> f64 {
        let below = self.draws.partition_point(|&d| d < statistic);
        (self.len() - below) as f64 / self.len() as f64
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        for v in [self.variant.code(), self.seed, self.group.len() as u64, self.len() as u64] {
            w.write_all(&v.to_le_bytes())?;
        }
        for &j in &self.group {
            w.write_all(&(j as u64).to_le_bytes())?;
        }
        for d in &self.draws {
            w.write_all(&d.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|_| Error::InputNotFound(path.to_path_buf()))?;
        let mut r = BufReader::new(file);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Parse(format!("{} is not a bootstrap file", path.display())));
        }
        let variant = Variant::from_code(read_u64(&mut r)?)?;
        let seed = read_u64(&mut r)?;
        let g = read_u64(&mut r)? as usize;
        let b = read_u64(&mut r)? as usize;
        let group = (0..g).map(|_| read_u64(&mut r).map(|v| v as usize)).collect::<Result<_>>()?;
        let draws = read_f64s(&mut r, b)?;
        Ok(BootstrapDistribution {
            draws,
            variant,
            group,
            seed,
        })
    }
}

/// 1-based rank `⌈(1−α)B⌉`, clamped to `[1, B]`.
fn quantile_rank(alpha: f64, b: usize) -> usize {
    let k = ((1.0 - alpha) * b as f64 - 1e-9).ceil() as usize;
    k.clamp(1, b)
}

/// Free-standing form of [`BootstrapDistribution::critical_value`].
pub fn critical_value(dist: &BootstrapDistribution, alpha: f64) -> Result<f64> {
    dist.critical_value(alpha)
}

/// Replicated score vectors `S = E·H/√n` for an `n × |G|` matrix `H` of
/// per-observation scores and a `B × n` matrix `E` of standard normals whose
/// row `b` comes from the counter stream `(seed, b)`. Any statistic over a
/// subset of the group reuses the same multipliers.
#[derive(Debug, Clone)]
pub struct MultiplierScores {
    scores: DMatrix<f64>,
    group: Vec<usize>,
    studentized: bool,
    seed: u64,
}

impl MultiplierScores {
    pub fn from_observation_scores(
        h: &DMatrix<f64>,
        group: &[usize],
        studentized: bool,
        draws: usize,
        seed: u64,
    ) -> Result<Self> {
        if draws < MIN_DRAWS {
            return Err(Error::InvalidArgument(format!(
                "bootstrap needs at least {MIN_DRAWS} draws, got {draws}"
            )));
        }
        if h.ncols() != group.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} score columns for a group of {}",
                h.ncols(),
                group.len()
            )));
        }
        let n = h.nrows();
        let rows: Vec<Vec<f64>> = (0..draws as u64)
            .into_par_iter()
            .map(|b| rng::normals(seed, b, n))
            .collect();
        let e = DMatrix::from_fn(draws, n, |b, i| rows[b][i]);
        let scores = e * h / (n as f64).sqrt();
        Ok(MultiplierScores {
            scores,
            group: group.to_vec(),
            studentized,
            seed,
        })
    }

    /// Linear-model scores `σ̂·(XΘ̂_jᵀ)_i`, divided by `√ω̂_jj` when studentized.
    pub fn linear(fit: &DesparsifiedFit, group: &[usize], studentized: bool, draws: usize, seed: u64) -> Result<Self> {
        check_group(group, fit.p())?;
        let m = fit.basis.matrix();
        let sigma = fit.sigma_eps_sq.sqrt();
        let h = DMatrix::from_fn(m.nrows(), group.len(), |i, k| {
            let j = group[k];
            let s = m[(i, j)] * sigma;
            if studentized {
                s / fit.omega_diag[j].sqrt()
            } else {
                s
            }
        });
        Self::from_observation_scores(&h, group, studentized, draws, seed)
    }

    pub fn draws(&self) -> usize {
        self.scores.nrows()
    }

    pub fn group(&self) -> &[usize] {
        &self.group
    }

    /// Max statistic over the whole group.
    pub fn distribution(&self, two_sided: bool) -> BootstrapDistribution {
        let all: Vec<usize> = (0..self.group.len()).collect();
        self.distribution_over_positions(&all, two_sided)
    }

    /// Max statistic over `subset`, given as coefficient indices that must
    /// belong to the group.
    pub fn subset_distribution(&self, subset: &[usize], two_sided: bool) -> Result<BootstrapDistribution> {
        if subset.is_empty() {
            return Err(Error::EmptyGroup);
        }
        let positions = subset
            .iter()
            .map(|j| {
                self.group
                    .iter()
                    .position(|g| g == j)
                    .ok_or_else(|| Error::GroupMismatch(format!("index {j} is not in the bootstrap group")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.distribution_over_positions(&positions, two_sided))
    }

    /// Unsorted per-replicate maxima over column `positions`.
    pub fn replicate_maxima(&self, positions: &[usize], two_sided: bool) -> Vec<f64> {
        (0..self.draws())
            .map(|b| {
                positions
                    .iter()
                    .map(|&k| {
                        let s = self.scores[(b, k)];
                        if two_sided {
                            s.abs()
                        } else {
                            s
                        }
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect()
    }

    fn distribution_over_positions(&self, positions: &[usize], two_sided: bool) -> BootstrapDistribution {
        let group = positions.iter().map(|&k| self.group[k]).collect();
        BootstrapDistribution::new(
            self.replicate_maxima(positions, two_sided),
            Variant::new(self.studentized, two_sided),
            group,
            self.seed,
        )
    }
}

/// Multiplier bootstrap of the max statistic over `group` for a linear-model
/// de-sparsified fit.
pub fn multiplier_bootstrap(
    fit: &DesparsifiedFit,
    group: &[usize],
    variant: Variant,
    draws: usize,
    seed: u64,
) -> Result<BootstrapDistribution> {
    Ok(MultiplierScores::linear(fit, group, variant.studentized(), draws, seed)?.distribution(variant.two_sided()))
}

/// Two-sided non-studentized bootstrap resampling the rows of
/// `ĥ_ij = σ̂·Θ̂_jᵀX̃_i` with replacement.
pub fn empirical_bootstrap(fit: &DesparsifiedFit, group: &[usize], draws: usize, seed: u64) -> Result<BootstrapDistribution> {
    check_group(group, fit.p())?;
    if draws < MIN_DRAWS {
        return Err(Error::InvalidArgument(format!(
            "bootstrap needs at least {MIN_DRAWS} draws, got {draws}"
        )));
    }
    let m = fit.basis.matrix();
    let n = m.nrows();
    let sigma = fit.sigma_eps_sq.sqrt();
    let h = DMatrix::from_fn(n, group.len(), |i, k| m[(i, group[k])] * sigma);
    let means: Vec<f64> = h.column_iter().map(|c| c.sum() / n as f64).collect();
    let root_n = (n as f64).sqrt();
    let maxima: Vec<f64> = (0..draws as u64)
        .into_par_iter()
        .map(|b| {
            let mut r = rng::stream(seed, b);
            let mut sums = vec![0.0; group.len()];
            for _ in 0..n {
                let i = r.random_range(0..n);
                for (k, s) in sums.iter_mut().enumerate() {
                    *s += h[(i, k)] - means[k];
                }
            }
            sums.iter().map(|s| (s / root_n).abs()).fold(0.0, f64::max)
        })
        .collect();
    Ok(BootstrapDistribution::new(
        maxima,
        Variant::NstTwoSided,
        group.to_vec(),
        seed,
    ))
}

/// Gumbel-type limit `F(x) = exp(−π^{−1/2}e^{−x/2})`.
pub fn extreme_value_cdf(x: f64) -> f64 {
    (-(-x / 2.0).exp() / std::f64::consts::PI.sqrt()).exp()
}

/// `q_α` with `F(q_α) = 1 − α`.
pub fn extreme_value_quantile(alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(-2.0 * (std::f64::consts::PI.sqrt() * (1.0 / (1.0 - alpha)).ln()).ln())
}

/// Threshold `2log|G| − loglog|G| + q_α` for the squared studentized max.
pub fn extreme_value_critical(alpha: f64, group_size: usize) -> Result<f64> {
    if group_size < 2 {
        return Err(Error::InvalidArgument(format!(
            "extreme-value approximation needs |G| >= 2, got {group_size}"
        )));
    }
    let g = group_size as f64;
    Ok(2.0 * g.ln() - g.ln().ln() + extreme_value_quantile(alpha)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub reject: bool,
    pub statistic: f64,
    pub critical: f64,
    pub p_value: f64,
}

/// Max statistic over `group` matching `variant`.
pub fn max_statistic(fit: &DesparsifiedFit, beta_tilde: &[f64], group: &[usize], variant: Variant) -> Result<f64> {
    check_group(group, fit.p())?;
    if beta_tilde.len() != fit.p() {
        return Err(Error::DimensionMismatch(format!(
            "null vector has length {}, expected {}",
            beta_tilde.len(),
            fit.p()
        )));
    }
    let root_n = (fit.n as f64).sqrt();
    Ok(group
        .iter()
        .map(|&j| {
            let mut t = root_n * (fit.beta_breve[j] - beta_tilde[j]);
            if variant.studentized() {
                t /= fit.omega_diag[j].sqrt();
            }
            if variant.two_sided() {
                t.abs()
            } else {
                t
            }
        })
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Tests `H₀: β_j = β̃_j for all j ∈ G` against the bootstrap distribution.
pub fn simultaneous_test(
    fit: &DesparsifiedFit,
    beta_tilde: &[f64],
    group: &[usize],
    dist: &BootstrapDistribution,
    alpha: f64,
) -> Result<TestOutcome> {
    if dist.group != group {
        return Err(Error::GroupMismatch(
            "bootstrap distribution was computed for a different group".into(),
        ));
    }
    let statistic = max_statistic(fit, beta_tilde, group, dist.variant)?;
    let critical = dist.critical_value(alpha)?;
    Ok(TestOutcome {
        reject: statistic > critical,
        statistic,
        critical,
        p_value: dist.p_value(statistic),
    })
}

/// Studentized test against the extreme-value threshold; the statistic is
/// `max_j n(β̆_j − β̃_j)²/ω̂_jj`.
pub fn extreme_value_test(fit: &DesparsifiedFit, beta_tilde: &[f64], group: &[usize], alpha: f64) -> Result<TestOutcome> {
    let t = max_statistic(fit, beta_tilde, group, Variant::StTwoSided)?;
    let statistic = t * t;
    let critical = extreme_value_critical(alpha, group.len())?;
    let g = group.len() as f64;
    let q = statistic - 2.0 * g.ln() + g.ln().ln();
    Ok(TestOutcome {
        reject: statistic > critical,
        statistic,
        critical,
        p_value: 1.0 - extreme_value_cdf(q),
    })
}
