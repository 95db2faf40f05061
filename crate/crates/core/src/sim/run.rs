//! Monte Carlo harness: fixed design per scenario, fresh coefficients and
//! errors per replication, order-independent aggregation.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{make_coefficients, make_covariance, response, sample_design, sample_errors, CoefPattern, Covariance, ErrorDist};
use crate::bootstrap::{extreme_value_critical, MultiplierScores, Variant, DEFAULT_DRAWS};
use crate::dataset::{fmt_f64, standardize, Dataset};
use crate::desparsify::{fit_desparsified, Debiaser};
use crate::error::{check_alpha, Error, Result};
use crate::nodewise::{PrecisionCache, PrecisionEstimate};
use crate::procedures::{
    bonferroni_holm, iterative_screen, marginal_screen, similarity, split_sample, stepdown_fwer, support_recover,
    NodewiseTuning, ScreenMode, ScreenSize, ScreenedFit, Sided, ThreeStepOptions, DEFAULT_TAU,
};
use crate::rng::derive_seed;
use crate::solvers::NoiseEstimate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub n: usize,
    pub p: usize,
    pub s0: usize,
    pub covariance: Covariance,
    pub errors: ErrorDist,
    pub coefficients: CoefPattern,
    /// Seed of the fixed design.
    #[serde(default)]
    pub seed: u64,
    /// Draw a new design (and precision estimate) in every replication.
    #[serde(default)]
    pub redraw_design: bool,
    /// Draw the coefficients (and support) once from `seed` instead of in
    /// every replication.
    #[serde(default)]
    pub fixed_coefficients: bool,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.covariance.validate()?;
        if self.n < 2 || self.p < 2 {
            return Err(Error::InvalidScenario(format!("need n, p >= 2, got n = {}, p = {}", self.n, self.p)));
        }
        if self.s0 > self.p {
            return Err(Error::InvalidScenario(format!("s0 = {} exceeds p = {}", self.s0, self.p)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    CiCoverage,
    SparseTest,
    Recovery,
    StepdownFwer,
    /// Probability that the screened set contains the true support.
    ScreenInclusion,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::CiCoverage => "ci_coverage",
            Task::SparseTest => "sparse_test",
            Task::Recovery => "recovery",
            Task::StepdownFwer => "stepdown_fwer",
            Task::ScreenInclusion => "screen_inclusion",
        }
    }
}

/// Groups for coverage runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiGroup {
    S0,
    S0c,
    All,
}

/// A tested group `include ∪ ([p] \ {1..exclude_first})`, 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestGroup {
    pub label: String,
    #[serde(default)]
    pub include: Vec<usize>,
    pub exclude_first: usize,
}

impl TestGroup {
    pub fn indices(&self, p: usize) -> Result<Vec<usize>> {
        let mut g: Vec<usize> = (self.exclude_first.min(p)..p).collect();
        for &j in &self.include {
            if j == 0 || j > p {
                return Err(Error::InvalidScenario(format!("group index {j} outside 1..={p}")));
            }
            g.push(j - 1);
        }
        g.sort_unstable();
        g.dedup();
        if g.is_empty() {
            return Err(Error::EmptyGroup);
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskOptions {
    pub alphas: Vec<f64>,
    pub nodewise: NodewiseTuning,
    pub noise: NoiseEstimate,
    pub ci_groups: Vec<CiGroup>,
    pub tau: f64,
    pub sided: Sided,
    pub test_groups: Vec<TestGroup>,
    pub c0: f64,
    pub screen: ScreenMode,
    pub screen_size: ScreenSize,
    pub k1: Option<usize>,
    /// Skip the one-step procedure in sparse-test runs.
    pub three_step_only: bool,
}

impl Default for TaskOptions {
    fn default() -> Self {
        TaskOptions {
            alphas: vec![0.05],
            nodewise: NodewiseTuning::default(),
            noise: NoiseEstimate::Modified,
            ci_groups: vec![CiGroup::S0, CiGroup::S0c, CiGroup::All],
            tau: DEFAULT_TAU,
            sided: Sided::Two,
            test_groups: Vec::new(),
            c0: 0.2,
            screen: ScreenMode::Marginal,
            screen_size: ScreenSize::SampleMinusOne,
            k1: None,
            three_step_only: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSpec {
    pub task: Task,
    pub reps: usize,
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default)]
    pub master_seed: u64,
}

fn default_draws() -> usize {
    DEFAULT_DRAWS
}

/// A scenario file: `[scenario]`, `[run]` and optional `[options]` tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub run: RunSpec,
    #[serde(default)]
    pub options: TaskOptions,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::InvalidScenario(e.to_string()))?;
        cfg.scenario.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::InputNotFound(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    pub fn run(&self) -> Result<SummaryTable> {
        run_with_options(&self.scenario, self.run.task, self.run.reps, self.run.draws, self.run.master_seed, &self.options)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub scenario: String,
    pub task: String,
    pub method: String,
    pub group: String,
    pub alpha: Option<f64>,
    pub metric: String,
    pub value: f64,
    /// Standard error of the mean over replications; for indicators this is
    /// `√(p̂(1−p̂)/reps)`.
    pub se: f64,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub rows: Vec<MetricRow>,
    pub replications: usize,
    pub failed: usize,
    pub runtime_secs: f64,
}

impl SummaryTable {
    pub fn get(&self, method: &str, group: &str, alpha: Option<f64>, metric: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| {
            r.method == method
                && r.group == group
                && r.metric == metric
                && match (r.alpha, alpha) {
                    (Some(a), Some(b)) => (a - b).abs() < 1e-12,
                    (None, None) => true,
                    _ => false,
                }
        })
    }

    /// CSV with a leading `#` header of provenance lines. Contains no timing
    /// so identical runs give identical bytes.
    pub fn to_csv(&self, header: &[String]) -> Result<String> {
        let mut out = String::new();
        for line in header {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(["scenario", "task", "method", "group", "alpha", "metric", "value", "se", "reps"])?;
        for r in &self.rows {
            w.write_record([
                r.scenario.clone(),
                r.task.clone(),
                r.method.clone(),
                r.group.clone(),
                r.alpha.map(fmt_f64).unwrap_or_default(),
                r.metric.clone(),
                fmt_f64(r.value),
                fmt_f64(r.se),
                r.reps.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
        out.push_str(&String::from_utf8(bytes).expect("csv output is UTF-8"));
        Ok(out)
    }
}

type Key = (String, String, Option<u64>, String);

/// One replication's observations, keyed by (method, group, α bits, metric).
#[derive(Debug, Default)]
struct RepRecord {
    values: Vec<(Key, f64)>,
}

impl RepRecord {
    fn push(&mut self, method: &str, group: &str, alpha: Option<f64>, metric: &str, value: f64) {
        self.values.push((
            (method.to_string(), group.to_string(), alpha.map(f64::to_bits), metric.to_string()),
            value,
        ));
    }

    fn flag(&mut self, method: &str, group: &str, alpha: Option<f64>, metric: &str, value: bool) {
        self.push(method, group, alpha, metric, if value { 1.0 } else { 0.0 });
    }
}

/// Per-scenario state shared by all replications.
struct Design {
    dataset: Dataset,
    debiaser: Debiaser,
}

fn build_design(scenario: &Scenario, options: &TaskOptions, seed: u64, needs_precision: bool) -> Result<Design> {
    let sigma = make_covariance(&scenario.covariance, scenario.p);
    let x = sample_design(&sigma, scenario.n, derive_seed(seed, &[0]))?;
    let dataset = standardize(&Dataset::new(x, DVector::zeros(scenario.n))?)?;
    let precision = if needs_precision {
        options.nodewise.estimate_cached(&dataset, derive_seed(seed, &[1]), PrecisionCache::from_env().as_ref())?
    } else {
        let p = scenario.p;
        PrecisionEstimate {
            theta: nalgebra::DMatrix::identity(p, p),
            tau_sq: vec![1.0; p],
            lambdas: vec![1.0; p],
            gammas: vec![Vec::new(); p],
        }
    };
    let debiaser = Debiaser::new(&dataset, Arc::new(precision))?;
    Ok(Design { dataset, debiaser })
}

/// Runs `reps` replications of `task` with default options.
pub fn run_scenario(scenario: &Scenario, task: Task, reps: usize, draws: usize, master_seed: u64) -> Result<SummaryTable> {
    run_with_options(scenario, task, reps, draws, master_seed, &TaskOptions::default())
}

pub fn run_with_options(
    scenario: &Scenario,
    task: Task,
    reps: usize,
    draws: usize,
    master_seed: u64,
    options: &TaskOptions,
) -> Result<SummaryTable> {
    let start = Instant::now();
    scenario.validate()?;
    for &a in &options.alphas {
        check_alpha(a)?;
    }
    if reps == 0 {
        return Ok(SummaryTable {
            rows: Vec::new(),
            replications: 0,
            failed: 0,
            runtime_secs: 0.0,
        });
    }
    let needs_precision = !matches!(task, Task::ScreenInclusion);
    let shared = if scenario.redraw_design {
        None
    } else {
        Some(build_design(scenario, options, scenario.seed, needs_precision)?)
    };

    let results: Vec<Result<RepRecord>> = (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let rep_seed = derive_seed(master_seed, &[2, r]);
            let owned;
            let design = match &shared {
                Some(d) => d,
                None => {
                    owned = build_design(scenario, options, derive_seed(scenario.seed, &[3, r]), needs_precision)?;
                    &owned
                }
            };
            replicate(scenario, task, draws, options, design, rep_seed)
        })
        .collect();

    let mut failed = 0;
    let mut order: Vec<Key> = Vec::new();
    let mut sums: BTreeMap<Key, Vec<f64>> = BTreeMap::new();
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(rec) => {
                for (key, v) in rec.values {
                    let entry = sums.entry(key.clone()).or_default();
                    if entry.is_empty() {
                        order.push(key);
                    }
                    entry.push(v);
                }
            }
            Err(e) => {
                log::warn!("replication {r} of {} failed: {e}", scenario.name);
                failed += 1;
            }
        }
    }
    if failed > 0 && failed as f64 >= 0.01 * reps as f64 {
        return Err(Error::TooManyFailures { failed, reps });
    }

    let mut rows = Vec::new();
    for key in order {
        let vals = &sums[&key];
        let m = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / m;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m;
        let (method, group, alpha, metric) = key;
        let alpha = alpha.map(f64::from_bits);
        let row = |metric: String, value: f64, se: f64| MetricRow {
            scenario: scenario.name.clone(),
            task: task.name().to_string(),
            method: method.clone(),
            group: group.clone(),
            alpha,
            metric,
            value,
            se,
            reps: vals.len(),
        };
        if metric == "d" {
            rows.push(row("d_sd".to_string(), var.sqrt(), f64::NAN));
            rows.insert(rows.len() - 1, row(metric, mean, (var / m).sqrt()));
        } else {
            rows.push(row(metric, mean, (var / m).sqrt()));
        }
    }
    Ok(SummaryTable {
        rows,
        replications: reps - failed,
        failed,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

fn ci_group(g: CiGroup, p: usize, support: &[usize]) -> (String, Vec<usize>) {
    match g {
        CiGroup::S0 => ("S0".into(), support.to_vec()),
        CiGroup::S0c => ("S0c".into(), (0..p).filter(|j| support.binary_search(j).is_err()).collect()),
        CiGroup::All => ("all".into(), (0..p).collect()),
    }
}

fn replicate(
    scenario: &Scenario,
    task: Task,
    draws: usize,
    options: &TaskOptions,
    design: &Design,
    seed: u64,
) -> Result<RepRecord> {
    let (n, p) = (scenario.n, scenario.p);
    let coef_seed = if scenario.fixed_coefficients {
        derive_seed(scenario.seed, &[4])
    } else {
        derive_seed(seed, &[0])
    };
    let (beta, support) = make_coefficients(&scenario.coefficients, n, p, scenario.s0, coef_seed)?;
    let errors = sample_errors(scenario.errors, n, derive_seed(seed, &[1]));
    let mut y = response(design.dataset.x(), &beta, &errors);
    let mean = y.mean();
    y.add_scalar_mut(-mean);
    let ds = design.dataset.with_response(y)?;
    let mut rec = RepRecord::default();
    let boot_seed = derive_seed(seed, &[2]);

    match task {
        Task::CiCoverage => {
            let (_, fit) = fit_desparsified(&ds, &design.debiaser, options.noise)?;
            let all: Vec<usize> = (0..p).collect();
            let root_n = (n as f64).sqrt();
            for studentized in [false, true] {
                let method = if studentized { "ST" } else { "NST" };
                let scores = MultiplierScores::linear(&fit, &all, studentized, draws, boot_seed)?;
                for &g in &options.ci_groups {
                    let (label, group) = ci_group(g, p, &support);
                    if group.is_empty() {
                        continue;
                    }
                    let dist = scores.subset_distribution(&group, true)?;
                    for &alpha in &options.alphas {
                        let c = dist.critical_value(alpha)?;
                        let half = |j: usize| if studentized { c * (fit.omega_diag[j] / n as f64).sqrt() } else { c / root_n };
                        let covered = group.iter().all(|&j| (fit.beta_breve[j] - beta[j]).abs() <= half(j));
                        let width = group.iter().map(|&j| 2.0 * half(j)).sum::<f64>() / group.len() as f64;
                        rec.flag(method, &label, Some(alpha), "coverage", covered);
                        rec.push(method, &label, Some(alpha), "width", width);
                    }
                }
            }
            for &g in &options.ci_groups {
                let (label, group) = ci_group(g, p, &support);
                if g == CiGroup::S0 || group.len() < 2 {
                    continue;
                }
                for &alpha in &options.alphas {
                    let t = extreme_value_critical(alpha, group.len())?.max(0.0).sqrt();
                    let half = |j: usize| t * (fit.omega_diag[j] / n as f64).sqrt();
                    let covered = group.iter().all(|&j| (fit.beta_breve[j] - beta[j]).abs() <= half(j));
                    let width = group.iter().map(|&j| 2.0 * half(j)).sum::<f64>() / group.len() as f64;
                    rec.flag("EX", &label, Some(alpha), "coverage", covered);
                    rec.push("EX", &label, Some(alpha), "width", width);
                }
            }
        }
        Task::Recovery => {
            let (_, fit) = fit_desparsified(&ds, &design.debiaser, options.noise)?;
            let all: Vec<usize> = (0..p).collect();
            let sel = support_recover(&fit, &all, options.tau)?.selected;
            let fp = sel.iter().filter(|j| support.binary_search(j).is_err()).count();
            let fn_ = support.iter().filter(|j| sel.binary_search(j).is_err()).count();
            rec.push("SupRec", "all", None, "d", similarity(&sel, &support)?);
            rec.push("SupRec", "all", None, "fp", fp as f64);
            rec.push("SupRec", "all", None, "fn", fn_ as f64);
        }
        Task::StepdownFwer => {
            let (_, fit) = fit_desparsified(&ds, &design.debiaser, options.noise)?;
            let all: Vec<usize> = (0..p).collect();
            let zero = vec![0.0; p];
            let s0 = support.len().max(1) as f64;
            let mut record = |method: &str, alpha: f64, rejected: &[usize]| {
                let false_rej = rejected.iter().any(|j| support.binary_search(j).is_err());
                let power = rejected.iter().filter(|j| support.binary_search(j).is_ok()).count() as f64 / s0;
                rec.flag(method, "all", Some(alpha), "fwer", false_rej);
                rec.push(method, "all", Some(alpha), "power", power);
            };
            for &alpha in &options.alphas {
                for studentized in [false, true] {
                    let r = stepdown_fwer(&fit, &zero, &all, alpha, draws, boot_seed, options.sided, studentized)?;
                    record(if studentized { "ST" } else { "NST" }, alpha, &r.rejected);
                }
                record("BH", alpha, &bonferroni_holm(&fit, &zero, &all, alpha)?);
            }
        }
        Task::SparseTest => {
            let zero = vec![0.0; p];
            let groups: Vec<(String, Vec<usize>)> = options
                .test_groups
                .iter()
                .map(|g| g.indices(p).map(|idx| (g.label.clone(), idx)))
                .collect::<Result<_>>()?;
            if !options.three_step_only {
                let (_, fit) = fit_desparsified(&ds, &design.debiaser, options.noise)?;
                let all: Vec<usize> = (0..p).collect();
                for studentized in [false, true] {
                    let method = if studentized { "one_step_ST" } else { "one_step_NST" };
                    let scores = MultiplierScores::linear(&fit, &all, studentized, draws, boot_seed)?;
                    for (label, group) in &groups {
                        let dist = scores.subset_distribution(group, true)?;
                        let stat = crate::bootstrap::max_statistic(&fit, &zero, group, Variant::new(studentized, true))?;
                        for &alpha in &options.alphas {
                            rec.flag(method, label, Some(alpha), "rejection", stat > dist.critical_value(alpha)?);
                        }
                    }
                }
            }
            let opts = ThreeStepOptions {
                alpha: options.alphas.first().copied().unwrap_or(0.05),
                c0: options.c0,
                screen: options.screen,
                size: options.screen_size,
                k1: options.k1,
                studentized: false,
                draws,
                seed: derive_seed(seed, &[3]),
                nodewise: options.nodewise,
                noise: options.noise,
            };
            let screened = ScreenedFit::new(&ds, &opts)?;
            for studentized in [false, true] {
                let method = if studentized { "three_step_ST" } else { "three_step_NST" };
                for (label, group) in &groups {
                    for &alpha in &options.alphas {
                        let out = screened.test(&zero, group, alpha, studentized, draws, derive_seed(seed, &[4]))?;
                        rec.flag(method, label, Some(alpha), "rejection", out.reject);
                    }
                }
            }
        }
        Task::ScreenInclusion => {
            let (d1, d2) = split_sample(n, options.c0, derive_seed(seed, &[3]))?;
            let k = options.screen_size.size(d2.len());
            let first = standardize(&ds.select_rows(&d1)?)?;
            let contains = |set: &[usize]| support.iter().all(|j| set.binary_search(j).is_ok());
            rec.flag("marginal", "S0", None, "inclusion", contains(&marginal_screen(&first, k)?));
            let k1 = options.k1.unwrap_or(k / 2);
            rec.flag("iterative", "S0", None, "inclusion", contains(&iterative_screen(&first, k, k1)?));
        }
    }
    Ok(rec)
}
