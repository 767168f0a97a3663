//! `mfnet`: fit, evaluate, audit and benchmark multifidelity surrogate
//! networks from the command line.
//!
//! Exit codes: 0 success, 1 input or configuration error, 2 fit stopped
//! without converging (outputs still written), 3 gradient check failed.

mod commands;
mod manifest;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug)]
pub struct CliError(String);

impl CliError {
    pub fn new(msg: impl Into<String>) -> Self {
        CliError(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<mfnets::Error> for CliError {
    fn from(e: mfnets::Error) -> Self {
        CliError(e.to_string())
    }
}

/// How a successful run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Done,
    NotConverged,
    GradCheckFailed,
}

#[derive(Parser, Debug)]
#[command(name = "mfnet", version, about = "Multifidelity surrogate networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a network to the data named in a manifest.
    Fit(FitArgs),
    /// Evaluate a fitted network at the points in a file.
    Predict(PredictArgs),
    /// Compare sweep gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic dataset, its graph and a ready-to-fit manifest.
    Generate(GenerateArgs),
    /// Run one of the seeded comparison studies.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RegArg {
    None,
    #[value(alias = "gaussian")]
    L2,
    #[value(alias = "laplace")]
    L1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Zeros,
    Gaussian,
    EdgeOne,
}

/// Overrides for the manifest's `[fit]` table.
#[derive(Args, Debug, Clone, Default)]
pub struct FitFlags {
    #[arg(long, value_enum)]
    pub reg: Option<RegArg>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub grad_tol: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long, value_enum)]
    pub init: Option<InitArg>,
    /// Standard deviation for `--init gaussian`.
    #[arg(long, default_value_t = 1.0)]
    pub init_scale: f64,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    pub manifest: PathBuf,
    #[command(flatten)]
    pub flags: FitFlags,
    /// Output directory; defaults to the manifest's `output_dir`, then `fit`
    /// beside the manifest.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub params: PathBuf,
    /// Graph file, or a manifest whose graph is used.
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub node: Option<u32>,
    #[arg(long)]
    pub points: PathBuf,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    pub manifest: PathBuf,
    /// Parameters to check at; random normal values when absent.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-6)]
    pub fd_step: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub threshold: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum FamilyArg {
    ThreeModel,
    AnalyticalNoise,
    PeerTruth,
    ChainTruth,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub family: FamilyArg,
    /// Samples per node, e.g. `2/3/3`.
    #[arg(long)]
    pub counts: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Draw each lower-fidelity sample set as a superset of the next.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub nested: bool,
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    #[arg(long, default_value_t = 1)]
    pub node_degree: usize,
    #[arg(long, default_value_t = 1)]
    pub edge_degree: usize,
    /// Additive noise standard deviation for the random families.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExperimentName {
    ThreeModel,
    Noise,
    Topology,
    Sparsity,
}

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    #[arg(value_enum)]
    pub name: ExperimentName,
    /// TOML file with the study's configuration; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of seeds, starting at `--seed`.
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub counts: Option<String>,
    /// Comma-separated lasso weights.
    #[arg(long)]
    pub lambda_grid: Option<String>,
    #[arg(long)]
    pub output: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Fit(a) => commands::fit(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::Generate(a) => commands::generate(&a),
        Command::Experiment(a) => commands::experiment(&a),
    };
    match result {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => ExitCode::from(2),
        Ok(Outcome::GradCheckFailed) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
