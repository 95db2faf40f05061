//! Subcommand bodies. Every artifact embeds the `RunConfig` that produced it.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use hdinfer::bootstrap::{extreme_value_test, multiplier_bootstrap, simultaneous_test, Variant};
use hdinfer::dataset::{standardize, Dataset};
use hdinfer::desparsify::{fit_desparsified, simultaneous_ci, Debiaser, DesparsifiedFit, SimultaneousCi};
use hdinfer::error::Result;
use hdinfer::glm::{glm_bootstrap, glm_desparsify, glm_lasso_fit, glm_precision, glm_precision_cv, glm_simultaneous_ci, LossSpec};
use hdinfer::nodewise::{write_precision, Lambdas, NodewiseCv, PrecisionCache};
use hdinfer::procedures::{
    stepdown_fwer, support_recover, three_step_test, NodewiseTuning, ScreenMode, Sided, ThreeStepOptions,
};
use hdinfer::rng::derive_seed;
use hdinfer::sim::ScenarioConfig;
use hdinfer::solvers::{NoiseEstimate, ScaledLassoFit};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{parse_beta_null, parse_group, Command, Method, RunConfig, ScreenArg, SidedArg};

pub fn execute(cfg: &RunConfig) -> Result<Value> {
    std::fs::create_dir_all(&cfg.out)?;
    match cfg.command {
        Command::Fit => fit(cfg),
        Command::Test => test(cfg),
        Command::Simulate => simulate(cfg),
        Command::GlmTest => glm_test(cfg),
    }
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<PathBuf> {
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(&path, text)?;
    Ok(path)
}

fn one_based(idx: &[usize]) -> Vec<usize> {
    idx.iter().map(|j| j + 1).collect()
}

fn tuning(cfg: &RunConfig) -> NodewiseTuning {
    match cfg.nodewise_lambda {
        Some(lambda) => NodewiseTuning::Fixed { lambda },
        None => NodewiseTuning::default(),
    }
}

/// The standardized data and the full-sample pipeline on it.
struct Pipeline {
    raw_sds: Vec<f64>,
    data: Dataset,
    scaled: ScaledLassoFit,
    fit: DesparsifiedFit,
}

impl Pipeline {
    fn new(cfg: &RunConfig) -> Result<Self> {
        let raw = Dataset::from_csv(cfg.x_path(), cfg.y_path())?;
        let data = standardize(&raw)?;
        let cache = PrecisionCache::from_env();
        let precision = tuning(cfg).estimate_cached(&data, derive_seed(cfg.seed(), &[1]), cache.as_ref())?;
        let debiaser = Debiaser::new(&data, Arc::new(precision))?;
        let (scaled, fit) = fit_desparsified(&data, &debiaser, NoiseEstimate::Modified)?;
        Ok(Pipeline {
            raw_sds: data.column_sds().to_vec(),
            data,
            scaled,
            fit,
        })
    }

    fn to_original(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.raw_sds).map(|(b, sd)| b / sd).collect()
    }

    fn to_standardized(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.raw_sds).map(|(b, sd)| b * sd).collect()
    }
}

#[derive(Serialize)]
struct IntervalOut {
    index: usize,
    lower: f64,
    upper: f64,
}

/// Intervals on the original scale of the design, 1-based.
fn intervals_out(ci: &SimultaneousCi, sds: &[f64]) -> Vec<IntervalOut> {
    ci.intervals
        .iter()
        .map(|iv| IntervalOut {
            index: iv.index + 1,
            lower: iv.lower / sds[iv.index],
            upper: iv.upper / sds[iv.index],
        })
        .collect()
}

fn fit(cfg: &RunConfig) -> Result<Value> {
    let pipe = Pipeline::new(cfg)?;
    let fit = &pipe.fit;
    let precision_path = cfg.out.join("precision.bin");
    write_precision(&precision_path, &fit.precision)?;
    let record = json!({
        "config": cfg,
        "version": hdinfer::VERSION,
        "n": pipe.data.n(),
        "p": pipe.data.p(),
        "lasso": {
            "lambda": pipe.scaled.lasso.lambda,
            "lambda0": pipe.scaled.lambda0,
            "active_set": one_based(&pipe.scaled.lasso.active_set),
            "objective": pipe.scaled.lasso.objective,
        },
        "sigma_hat": pipe.scaled.sigma_hat,
        "sigma_hat_modified": pipe.scaled.sigma_hat_modified,
        "nodewise_lambda": fit.precision.lambdas.first().copied(),
        "beta_hat": pipe.to_original(&fit.beta_hat),
        "beta_breve": pipe.to_original(&fit.beta_breve),
        "standardized": fit.record(),
        "column_sds": pipe.raw_sds,
    });
    let path = write_json(&cfg.out, "fit.json", &record)?;
    Ok(json!({ "fit": path, "precision": precision_path }))
}

fn test(cfg: &RunConfig) -> Result<Value> {
    let pipe = Pipeline::new(cfg)?;
    let p = pipe.data.p();
    let group = parse_group(&cfg.group, p)?;
    let tilde = pipe.to_standardized(&parse_beta_null(cfg.beta_null.as_deref(), p)?);
    let two_sided = cfg.sided == SidedArg::Two;
    let seed = derive_seed(cfg.seed(), &[2]);
    let fit = &pipe.fit;
    let mut report = json!({
        "config": cfg,
        "version": hdinfer::VERSION,
        "method": cfg.method,
        "group": one_based(&group),
    });
    match cfg.method {
        Method::Single => {
            let variant = Variant::new(cfg.studentized, two_sided);
            let dist = multiplier_bootstrap(fit, &group, variant, cfg.bootstrap_draws, seed)?;
            dist.write_binary(&cfg.out.join("bootstrap.bin"))?;
            let t = simultaneous_test(fit, &tilde, &group, &dist, cfg.alpha)?;
            merge(&mut report, json!(t));
        }
        Method::Ex => {
            let t = extreme_value_test(fit, &tilde, &group, cfg.alpha)?;
            merge(&mut report, json!(t));
        }
        Method::Stepdown => {
            let sided = if two_sided { Sided::Two } else { Sided::One };
            let r = stepdown_fwer(fit, &tilde, &group, cfg.alpha, cfg.bootstrap_draws, seed, sided, cfg.studentized)?;
            let steps: Vec<Value> = r
                .steps
                .iter()
                .map(|s| json!({ "active": one_based(&s.active), "critical": s.critical }))
                .collect();
            merge(&mut report, json!({ "rejected": one_based(&r.rejected), "steps": steps }));
        }
        Method::Recover => {
            let r = support_recover(fit, &group, cfg.tau)?;
            merge(
                &mut report,
                json!({ "selected": one_based(&r.selected), "tau": r.tau, "thresholds": r.thresholds }),
            );
        }
        Method::ThreeStep => {
            let opts = ThreeStepOptions {
                alpha: cfg.alpha,
                c0: cfg.c0,
                screen: match cfg.screen {
                    ScreenArg::Marginal => ScreenMode::Marginal,
                    ScreenArg::Iterative => ScreenMode::Iterative,
                },
                studentized: cfg.studentized,
                draws: cfg.bootstrap_draws,
                seed: derive_seed(cfg.seed(), &[3]),
                nodewise: tuning(cfg),
                ..ThreeStepOptions::default()
            };
            let t = three_step_test(&pipe.data, &tilde, &group, &opts)?;
            merge(
                &mut report,
                json!({
                    "reject": t.reject,
                    "statistic": t.statistic,
                    "critical": t.critical,
                    "p_value": t.p_value,
                    "reduced_group": one_based(&t.reduced_group),
                    "screened": one_based(&t.screened),
                    "d1": one_based(&t.d1),
                    "d2": one_based(&t.d2),
                }),
            );
        }
    }
    if cfg.intervals {
        let dist = multiplier_bootstrap(fit, &group, Variant::new(cfg.studentized, true), cfg.bootstrap_draws, seed)?;
        let ci = simultaneous_ci(fit, &group, dist.critical_value(cfg.alpha)?, cfg.studentized)?;
        merge(&mut report, json!({ "intervals": intervals_out(&ci, &pipe.raw_sds) }));
    }
    let path = write_json(&cfg.out, "test.json", &report)?;
    Ok(json!({ "report": path }))
}

fn merge(into: &mut Value, from: Value) {
    if let (Value::Object(a), Value::Object(b)) = (into, from) {
        a.extend(b);
    }
}

fn simulate(cfg: &RunConfig) -> Result<Value> {
    let path = cfg.scenario.as_deref().expect("validated");
    let mut sc = ScenarioConfig::load(path)?;
    if let Some(reps) = cfg.reps {
        sc.run.reps = reps;
    }
    if let Some(seed) = cfg.seed {
        sc.run.master_seed = seed;
    }
    let table = sc.run()?;
    let header = vec![
        format!("hdinfer {}", hdinfer::VERSION),
        format!("scenario = {}", sc.scenario.name),
        format!("task = {}", sc.run.task.name()),
        format!("reps = {}", sc.run.reps),
        format!("draws = {}", sc.run.draws),
        format!("master_seed = {}", sc.run.master_seed),
        format!("failed = {}", table.failed),
        format!("config = {}", serde_json::to_string(cfg)?),
        format!("scenario_config = {}", serde_json::to_string(&sc)?),
    ];
    let csv_path = cfg.out.join("summary.csv");
    std::fs::write(&csv_path, table.to_csv(&header)?)?;
    let record = json!({
        "config": cfg,
        "scenario_config": sc,
        "version": hdinfer::VERSION,
        "wall_time_secs": table.runtime_secs,
        "table": table,
    });
    let json_path = write_json(&cfg.out, "summary.json", &record)?;
    Ok(json!({ "csv": csv_path, "json": json_path, "rows": table.rows.len() }))
}

/// `s·√(2 log p / n)` with `s` bounding the spread of `L̇`.
fn default_glm_lambda(loss: &LossSpec, data: &Dataset) -> f64 {
    let (n, p) = (data.n() as f64, data.p() as f64);
    let scale = match loss.name {
        "logistic" => 0.5,
        _ => {
            let y = data.y();
            let m = y.mean();
            (y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt()
        }
    };
    scale * (2.0 * p.ln() / n).sqrt()
}

fn glm_test(cfg: &RunConfig) -> Result<Value> {
    let loss = LossSpec::by_name(&cfg.loss)?;
    let raw = Dataset::from_csv(cfg.x_path(), cfg.y_path())?;
    // Columns are standardized but the response keeps its coding.
    let data = standardize(&raw)?.with_response(raw.y().clone())?;
    let sds = data.column_sds().to_vec();
    let p = data.p();
    let group = parse_group(&cfg.group, p)?;
    let tilde: Vec<f64> = parse_beta_null(cfg.beta_null.as_deref(), p)?
        .iter()
        .zip(&sds)
        .map(|(b, sd)| b * sd)
        .collect();
    let lambda = cfg.lambda.unwrap_or_else(|| default_glm_lambda(&loss, &data));
    let lasso = glm_lasso_fit(&data, &loss, lambda)?;
    let precision = match cfg.nodewise_lambda {
        Some(l) => glm_precision(&data, &lasso.beta, &loss, &Lambdas::Shared(l))?,
        None => {
            let cv = NodewiseCv {
                seed: derive_seed(cfg.seed(), &[1]),
                ..NodewiseCv::default()
            };
            glm_precision_cv(&data, &lasso.beta, &loss, &cv)?
        }
    };
    let fit = glm_desparsify(&data, &lasso.beta, Arc::new(precision), &loss)?;
    let dist = glm_bootstrap(&fit, &group, cfg.bootstrap_draws, derive_seed(cfg.seed(), &[2]), cfg.studentized)?;
    let critical = dist.critical_value(cfg.alpha)?;
    let root_n = (fit.n as f64).sqrt();
    let statistic = group
        .iter()
        .map(|&j| {
            let t = root_n * (fit.beta_breve[j] - tilde[j]).abs();
            if cfg.studentized {
                t / fit.w_diag[j].sqrt()
            } else {
                t
            }
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let ci = glm_simultaneous_ci(&fit, &group, critical, cfg.studentized)?;
    let to_orig = |v: &[f64]| -> Vec<f64> { v.iter().zip(&sds).map(|(b, sd)| b / sd).collect() };
    let report = json!({
        "config": cfg,
        "version": hdinfer::VERSION,
        "loss": loss.name,
        "lambda": lambda,
        "group": one_based(&group),
        "beta_hat": to_orig(&fit.beta_hat),
        "beta_breve": to_orig(&fit.beta_breve),
        "statistic": statistic,
        "critical": critical,
        "p_value": dist.p_value(statistic),
        "reject": statistic > critical,
        "intervals": intervals_out(&ci, &sds),
        "standardized": fit.record(),
    });
    let path = write_json(&cfg.out, "glm.json", &report)?;
    Ok(json!({ "report": path }))
}
