//! `scc`: batch fitting, estimands, inference and simulation for two-arm
//! survival data under a single-crossing constraint.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod artifacts;
mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "scc", version, about = "Single-crossing constrained survival estimation")]
struct Cli {
    /// Worker threads for the parallel parts (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit both arms under the single-crossing constraint.
    Fit(FitArgs),
    /// Evaluate efficacy measures from a fit directory.
    Estimands(EstimandsArgs),
    /// Stratified bootstrap percentile intervals.
    Bootstrap(BootstrapArgs),
    /// Joint bootstrap tests or a permutation test.
    Test(TestArgs),
    /// Run the piecewise-exponential MSE study.
    Simulate(SimulateArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Constraint {
    Survival,
    Hazard,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SolverArgs {
    /// Scaled KKT tolerance.
    #[arg(long, default_value_t = 1e-7)]
    pub tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct FitArgs {
    /// CSV with header `time,event,arm`.
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "survival")]
    pub constraint: Constraint,
    /// Replace follow-up times by the midpoints of bins of this width.
    #[arg(long)]
    pub bin_width: Option<f64>,
    /// LOWESS span for the smoothed hazards of a hazard fit.
    #[arg(long, default_value_t = scc_core::hazard::DEFAULT_SPAN)]
    pub span: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Survival,
    Hazard,
}

#[derive(Args, Debug, Serialize)]
pub struct EstimandsArgs {
    /// Directory written by `scc fit`.
    pub fitdir: PathBuf,
    /// Truncation time (default: last event time).
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub milestones: Vec<f64>,
    /// Times for survival differences conditional on reaching the crossing.
    #[arg(long, value_delimiter = ',')]
    pub conditional_times: Vec<f64>,
    #[arg(long, value_enum, default_value = "survival")]
    pub hazard_source: Source,
    /// Hazard-constrained fit directory of the same data.
    #[arg(long)]
    pub hazard_fit: Option<PathBuf>,
    /// Output directory (default: the fit directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct BootstrapArgs {
    pub input: PathBuf,
    /// Estimand such as `rmst_diff(36)`, `theta` or `milestone_diff(12)`; repeatable.
    #[arg(long = "estimand", required = true)]
    pub estimands: Vec<String>,
    #[arg(long = "B", default_value_t = scc_core::inference::DEFAULT_B)]
    pub b: usize,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "survival")]
    pub constraint: Constraint,
    #[arg(long)]
    pub bin_width: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum TestType {
    Theta,
    Surv,
    Perm,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum DirectionArg {
    Greater,
    Less,
    Both,
}

#[derive(Args, Debug, Serialize)]
pub struct TestArgs {
    pub input: PathBuf,
    #[arg(long = "type", value_enum)]
    pub test_type: TestType,
    /// Efficacy measure of the joint tests.
    #[arg(long, required_if_eq_any = [("test_type", "theta"), ("test_type", "surv")])]
    pub phi: Option<String>,
    #[arg(long, default_value_t = 0.0)]
    pub phi_star: f64,
    /// Crossing-time bound of the `theta` test.
    #[arg(long, required_if_eq("test_type", "theta"))]
    pub theta_star: Option<f64>,
    /// Survival-at-crossing bound of the `surv` test.
    #[arg(long, required_if_eq("test_type", "surv"))]
    pub p_star: Option<f64>,
    /// Permutation statistic component; repeatable.
    #[arg(long = "statistic", required_if_eq("test_type", "perm"))]
    pub statistics: Vec<String>,
    /// Extremeness direction of each statistic component.
    #[arg(long = "direction", value_enum)]
    pub directions: Vec<DirectionArg>,
    #[arg(long = "B", default_value_t = scc_core::inference::DEFAULT_B)]
    pub b: usize,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub bin_width: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct SimulateArgs {
    /// Scenario file (TOML).
    pub config: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Override the replicate count of the file.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Override the sample sizes of the file; repeatable.
    #[arg(long = "n")]
    pub ns: Vec<usize>,
    /// Run only these scenario labels; repeatable.
    #[arg(long = "scenario")]
    pub scenarios: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Estimands(a) => commands::estimands(a),
        Command::Bootstrap(a) => commands::bootstrap(a),
        Command::Test(a) => commands::test(a),
        Command::Simulate(a) => commands::simulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code() as u8)
        }
    }
}
