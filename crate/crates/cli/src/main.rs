//! `hdinfer` command-line interface.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hdinfer::error::{Error, Result};
use hdinfer::bootstrap::DEFAULT_DRAWS;
use serde_json::json;

use config::{Command, Method, RunConfig, ScreenArg, SidedArg};

#[derive(Parser)]
#[command(name = "hdinfer", version, about = "Simultaneous inference for high-dimensional sparse regression")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Scaled Lasso, nodewise precision estimate and de-sparsified coefficients.
    Fit(Common),
    /// Group test, step-down, support recovery or extreme-value test.
    Test(Common),
    /// Monte Carlo run of a scenario file.
    Simulate(Common),
    /// De-biased inference for a convex loss (logistic by default).
    GlmTest(Common),
    /// Re-run the configuration embedded in a JSON artifact.
    Replay {
        artifact: PathBuf,
        /// Output directory; defaults to the artifact's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// Headerless numeric CSV design matrix.
    #[arg(long)]
    x: Option<PathBuf>,
    /// Headerless single-column CSV response.
    #[arg(long)]
    y: Option<PathBuf>,
    /// Scenario file (simulate only).
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// `all`, a 1-based list such as `1,3,5-9`, or `complement:<list>`.
    #[arg(long, default_value = "all")]
    group: String,
    /// Null values: one number, a comma-separated vector, or a CSV path.
    #[arg(long)]
    beta_null: Option<String>,
    #[arg(long, default_value_t = DEFAULT_DRAWS)]
    bootstrap_draws: usize,
    /// Seed for all randomness; for simulate it replaces the file's master seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    studentized: bool,
    #[arg(long, value_enum, default_value_t = SidedArg::Two)]
    sided: SidedArg,
    #[arg(long, value_enum, default_value_t = Method::Single)]
    method: Method,
    #[arg(long, value_enum, default_value_t = ScreenArg::Marginal)]
    screen: ScreenArg,
    /// Fraction of observations used for screening (three-step).
    #[arg(long, default_value_t = 0.2)]
    c0: f64,
    /// Threshold constant for support recovery.
    #[arg(long, default_value_t = hdinfer::procedures::DEFAULT_TAU)]
    tau: f64,
    /// Fixed nodewise penalty instead of cross-validation.
    #[arg(long)]
    nodewise_lambda: Option<f64>,
    /// Loss for glm-test: logistic or squared.
    #[arg(long, default_value = "logistic")]
    loss: String,
    /// Penalty for glm-test (default: a universal choice for the loss).
    #[arg(long)]
    lambda: Option<f64>,
    /// Also report simultaneous confidence intervals over the group.
    #[arg(long)]
    intervals: bool,
    /// Replication count override (simulate only).
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl Common {
    fn into_config(self, command: Command) -> RunConfig {
        RunConfig {
            command,
            x: self.x,
            y: self.y,
            scenario: self.scenario,
            alpha: self.alpha,
            group: self.group,
            beta_null: self.beta_null,
            bootstrap_draws: self.bootstrap_draws,
            seed: self.seed,
            studentized: self.studentized,
            sided: self.sided,
            method: self.method,
            screen: self.screen,
            c0: self.c0,
            tau: self.tau,
            nodewise_lambda: self.nodewise_lambda,
            loss: self.loss,
            lambda: self.lambda,
            intervals: self.intervals,
            reps: self.reps,
            out: self.out,
        }
    }
}

fn load_embedded(path: &std::path::Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::InputNotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let cfg = value
        .get("config")
        .ok_or_else(|| Error::Parse(format!("{} has no embedded config", path.display())))?;
    Ok(serde_json::from_value(cfg.clone())?)
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("--threads: {e}")))?;
    }
    let cfg = match cli.command {
        Sub::Fit(c) => c.into_config(Command::Fit),
        Sub::Test(c) => c.into_config(Command::Test),
        Sub::Simulate(c) => c.into_config(Command::Simulate),
        Sub::GlmTest(c) => c.into_config(Command::GlmTest),
        Sub::Replay { artifact, out } => {
            let mut cfg = load_embedded(&artifact)?;
            cfg.out = out.unwrap_or_else(|| match artifact.parent() {
                Some(dir) if !dir.as_os_str().is_empty() => dir.to_path_buf(),
                _ => PathBuf::from("."),
            });
            cfg
        }
    };
    cfg.validate()?;
    commands::execute(&cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            println!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::from(2)
        }
    }
}
