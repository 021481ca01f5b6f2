mod commands;
mod config;
mod io;
mod validate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "mvpt", version, about = "Meta-analysis of median event times with dependent Polya trees")]
pub struct Cli {
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Number of MCMC chains.
    #[arg(long, global = true)]
    pub chains: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check input files against their schemas.
    Validate(ValidateArgs),
    /// Fit the model to cohort summaries.
    Fit(FitArgs),
    /// Posterior summaries and density grids from a fit.
    Summarize(SummarizeArgs),
    /// Generate simulated datasets, optionally running the full bias study.
    Simulate(SimulateArgs),
    /// Merge reports and summarize realized bias for plotting.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    /// Files to check; the schema is detected from the header or extension.
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Cohort summary CSV.
    #[arg(long, required_unless_present = "resume")]
    pub data: Option<PathBuf>,
    /// Future cohorts CSV (covariates and optional l, m, h anchor).
    #[arg(long)]
    pub future: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    /// Continue the chains stored in --out up to the configured iteration count.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Args, Debug)]
pub struct SummarizeArgs {
    /// Directory written by `fit`.
    #[arg(long)]
    pub fit: PathBuf,
    /// JSON list of queries.
    #[arg(long)]
    pub query: PathBuf,
    /// Output directory (defaults to the fit directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub mean_draws: Option<usize>,
    #[arg(long)]
    pub grid_points: Option<usize>,
    #[arg(long)]
    pub grid_max: Option<f64>,
    /// Cohorts for the density grid (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub density_cohorts: Vec<String>,
    /// Store per-draw values in report.json.
    #[arg(long)]
    pub keep_draws: bool,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// `table1` or a TOML file holding a scenario.
    #[arg(long, default_value = "table1")]
    pub scenario: String,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "sim")]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Fit every replicate and write realized bias.
    #[arg(long)]
    pub study: bool,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub mean_draws: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// report.csv files to merge.
    #[arg(long = "report")]
    pub reports: Vec<PathBuf>,
    /// bias_long.csv files to merge and summarize.
    #[arg(long = "bias")]
    pub bias: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
