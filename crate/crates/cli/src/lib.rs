//! Command line driver: `generate`, `check`, `evaluate` and `replay`.

mod commands;
pub mod manifest;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use garpcast_core::evalkit::{EvalError, ForecastError};
use garpcast_core::panel::PanelError;
use garpcast_core::revpref::{RevPrefError, DEFAULT_CCEI_TOLERANCE};
use garpcast_core::syngen::{GenConfig, GenError};

pub use commands::{run, Outcome};

pub const EXIT_OK: u8 = 0;
pub const EXIT_OTHER: u8 = 1;
pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_COVERAGE: u8 = 3;
pub const EXIT_EXHAUSTION: u8 = 4;
pub const EXIT_REPLAY_MISMATCH: u8 = 5;

pub const OUT_DIR_ENV: &str = "GARPCAST_OUT_DIR";
pub const DEFAULT_MAX_FAILURE_RATE: f64 = 0.001;

#[derive(Debug, Parser)]
#[command(
    name = "garpcast",
    version,
    about = "Generate, check and evaluate consumption panels"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "subcommand")]
pub enum Command {
    /// Generate a GARP-consistent synthetic panel.
    Generate(GenerateArgs),
    /// Test every agent of a panel for GARP and compute its CCEI.
    Check(CheckArgs),
    /// Score forecast files and baselines against a panel's hold-out periods.
    Evaluate(EvaluateArgs),
    /// Re-run a recorded command and compare output checksums.
    Replay(ReplayArgs),
}

impl Command {
    pub fn out_dir(&self) -> &Path {
        match self {
            Command::Generate(a) => &a.common.out,
            Command::Check(a) => &a.common.out,
            Command::Evaluate(a) => &a.common.out,
            Command::Replay(a) => a.out.as_deref().unwrap_or(Path::new(".")),
        }
    }

    pub fn set_out_dir(&mut self, out: PathBuf) {
        match self {
            Command::Generate(a) => a.common.out = out,
            Command::Check(a) => a.common.out = out,
            Command::Evaluate(a) => a.common.out = out,
            Command::Replay(a) => a.out = Some(out),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct Common {
    /// Output directory (created if missing).
    #[arg(long, env = OUT_DIR_ENV, default_value = "garpcast-out")]
    pub out: PathBuf,
    /// Worker threads; 0 uses every core. Outputs do not depend on it.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = GenConfig::default().n_agents)]
    pub agents: usize,
    #[arg(long, default_value_t = GenConfig::default().periods)]
    pub periods: usize,
    #[arg(long, default_value_t = GenConfig::default().goods)]
    pub goods: usize,
    #[arg(long, default_value_t = GenConfig::default().budget)]
    pub budget: f64,
    /// Median of the lognormal price law.
    #[arg(long, default_value_t = GenConfig::default().price_median)]
    pub price_median: f64,
    /// Standard deviation of log prices.
    #[arg(long, default_value_t = GenConfig::default().price_log_sd)]
    pub price_log_sd: f64,
    /// Candidate draws allowed per period.
    #[arg(long, default_value_t = GenConfig::default().max_iterations)]
    pub max_iterations: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Share of requested agents allowed to exhaust their draws before the run fails.
    #[arg(long, default_value_t = DEFAULT_MAX_FAILURE_RATE)]
    pub max_failure_rate: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

impl GenerateArgs {
    pub fn config(&self) -> GenConfig {
        GenConfig {
            n_agents: self.agents,
            periods: self.periods,
            goods: self.goods,
            budget: self.budget,
            price_median: self.price_median,
            price_log_sd: self.price_log_sd,
            max_iterations: self.max_iterations,
            master_seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct CheckArgs {
    /// Panel CSV (a `.meta.json` sidecar next to it is read if present).
    pub panel: PathBuf,
    /// Bisection tolerance of the CCEI.
    #[arg(long, default_value_t = DEFAULT_CCEI_TOLERANCE)]
    pub ccei_tolerance: f64,
    /// Relative slack allowed when checking spending against the budget.
    #[arg(long, default_value_t = garpcast_core::panel::DEFAULT_BUDGET_TOLERANCE)]
    pub budget_tolerance: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// Repeat the last context bundle.
    Naive,
    /// Uniform draw from each hold-out budget simplex.
    Random,
}

impl Baseline {
    pub fn model_name(self) -> &'static str {
        match self {
            Baseline::Naive => "naive",
            Baseline::Random => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    pub panel: PathBuf,
    /// Forecast file as `NAME=PATH`; repeatable.
    #[arg(long = "forecast", value_name = "NAME=PATH")]
    pub forecasts: Vec<String>,
    /// Context length.
    #[arg(long, default_value_t = garpcast_core::panel::SplitSpec::DEFAULT_CONTEXT)]
    pub context: usize,
    /// Hold-out lengths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "10")]
    pub horizon: Vec<usize>,
    /// Internal baselines, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub baselines: Vec<Baseline>,
    /// Seed of the random baseline.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Model pair `A,B` to compare; repeatable. Defaults to the first model
    /// against each other model.
    #[arg(long = "compare", value_name = "A,B")]
    pub compare: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_CCEI_TOLERANCE)]
    pub ccei_tolerance: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Where to write the replayed outputs; defaults to `replay/` next to the manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("validation failed:\n{0}")]
    Validation(String),
    #[error("incomplete forecast coverage: {0}")]
    Coverage(String),
    #[error("generation exhausted: {0}")]
    Exhaustion(String),
    #[error("replay mismatch:\n{0}")]
    ReplayMismatch(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Coverage(_) => EXIT_COVERAGE,
            CliError::Exhaustion(_) => EXIT_EXHAUSTION,
            CliError::ReplayMismatch(_) => EXIT_REPLAY_MISMATCH,
            CliError::Other(_) => EXIT_OTHER,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Other(format!("{}: {e}", path.display()))
    }
}

impl From<PanelError> for CliError {
    fn from(e: PanelError) -> Self {
        match e {
            PanelError::Io { .. } => CliError::Other(e.to_string()),
            PanelError::Invalid(vs) => CliError::Validation(
                vs.iter()
                    .map(|v| format!("  {v}"))
                    .collect::<Vec<_>>()
                    .join("\n"),
            ),
            other => CliError::Validation(format!("  {other}")),
        }
    }
}

impl From<ForecastError> for CliError {
    fn from(e: ForecastError) -> Self {
        match e {
            ForecastError::Io { .. } => CliError::Other(e.to_string()),
            other => CliError::Validation(format!("  {other}")),
        }
    }
}

impl From<RevPrefError> for CliError {
    fn from(e: RevPrefError) -> Self {
        CliError::Validation(format!("  {e}"))
    }
}

impl From<GenError> for CliError {
    fn from(e: GenError) -> Self {
        match e {
            GenError::Exhausted(x) => CliError::Exhaustion(format!(
                "agent {} found no GARP-consistent bundle in period {} after {} draws",
                x.agent_index, x.period, x.draws
            )),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::MissingForecasts(_) | EvalError::ShortForecast { .. } => {
                CliError::Coverage(e.to_string())
            }
            EvalError::Panel(p) => p.into(),
            EvalError::Forecast(f) => f.into(),
            EvalError::RevPref { .. } => CliError::Validation(format!("  {e}")),
            other => CliError::Other(other.to_string()),
        }
    }
}
