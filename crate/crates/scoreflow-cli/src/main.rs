//! `scoreflow`: plan, analyse, bound, sample and validate probability-flow
//! ODE runs from the command line.
//!
//! Exit codes: 0 success, 1 bound violated, 2 usage, 3 domain or config
//! error.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Domain(#[from] scoreflow::Error),
    #[error("i/o error: {0}")]
    Io(String),
}

#[derive(Parser, Debug)]
#[command(name = "scoreflow", version, about = "Probability-flow ODE sampling with certified W2 error bounds")]
struct Cli {
    /// Directory for output artifacts; falls back to the config's `output_dir`.
    #[arg(long, global = true, env = "SCOREFLOW_OUT_DIR")]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Plan T, h, K and the score budget for an accuracy epsilon.
    Plan(PlanArgs),
    /// Tabulate alpha(t), M(t), K(t) and L(t) as CSV.
    Analyze(AnalyzeArgs),
    /// Evaluate the error bound for a config.
    Bound(ConfigArg),
    /// Run the sampler and write samples as CSV.
    Sample(SampleArgs),
    /// W2 distance between two CSV sample files.
    W2(W2Args),
    /// Sample, measure W2 against fresh target draws and compare with the bound.
    Validate(ConfigArg),
}

#[derive(ValueEnum, Clone, Copy, Debug)]
#[value(rename_all = "snake_case")]
enum FamilyName {
    Ou,
    VeExp,
    VePoly,
    VpConst,
    VpLinear,
    VpPoly,
}

#[derive(Args, Debug)]
struct FamilyArgs {
    #[arg(long, value_enum, default_value = "ou")]
    family: FamilyName,
    /// Schedule parameter `a` (default 1).
    #[arg(long)]
    a: Option<f64>,
    /// Schedule parameter `b` (default 1).
    #[arg(long)]
    b: Option<f64>,
    /// Exponent `c` of `ve_poly` (default 1).
    #[arg(long)]
    c: Option<f64>,
    /// Exponent `rho` of `vp_poly` (default 1).
    #[arg(long)]
    rho: Option<f64>,
}

#[derive(Args, Debug)]
struct PlanArgs {
    #[command(flatten)]
    family: FamilyArgs,
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    d: usize,
    /// Use this `||X0||` in place of `sqrt(d)`.
    #[arg(long)]
    x0_norm: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    constant_c: f64,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// Take schedule, constants and horizon from a config instead of flags.
    #[arg(long, conflicts_with_all = ["alpha0", "m0"])]
    config: Option<PathBuf>,
    #[command(flatten)]
    family: FamilyArgs,
    #[arg(long, required_unless_present = "config")]
    alpha0: Option<f64>,
    #[arg(long, required_unless_present = "config")]
    m0: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    l0: f64,
    #[arg(long, default_value_t = 5.0)]
    t_end: f64,
    #[arg(long, default_value_t = 501)]
    points: usize,
}

#[derive(Args, Debug)]
struct ConfigArg {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override the config's number of samples.
    #[arg(long)]
    n: Option<usize>,
    /// Override the config's number of steps.
    #[arg(long)]
    k_steps: Option<usize>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
#[value(rename_all = "snake_case")]
enum MethodName {
    Auto,
    Exact1d,
    GaussianClosedForm,
    Coordinatewise,
    Sliced,
    LpOracle,
}

#[derive(Args, Debug)]
struct W2Args {
    a: PathBuf,
    b: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodName::Auto)]
    method: MethodName,
    #[arg(long, default_value_t = 256)]
    n_proj: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
