use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hybrid_sis::Sweep;

mod commands;
mod output;

/// Optimal treatment and vaccination policies for regime-switching SIS
/// epidemics.
#[derive(Parser, Debug)]
#[command(name = "hybrid-sis", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Solve the treatment model; writes value_policy.csv and convergence.csv.
    Solve1d(Common),
    /// Solve the vaccination model; writes value_policy.csv and convergence.csv.
    Solve2d(Common),
    /// Simulate the SDE under the computed optimal policy; writes stats.csv.
    Simulate(SimulateArgs),
    /// Audit the transition law; writes consistency.csv.
    Consistency(ModelArgs),
    /// Mesh-refinement study; writes refine.csv.
    Refine(RefineArgs),
    /// HJB residual of a treatment-model solution; writes hjb.csv.
    HjbResidual(Common),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Model {
    /// Infected fraction only.
    Sis,
    /// Infected and vaccinated fractions.
    Siv,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Problem configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Mesh size; 1/h must be an integer.
    #[arg(long, default_value_t = 0.005)]
    pub h: f64,
    /// Sup-norm stopping tolerance for value iteration.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 1_000_000)]
    pub max_iters: usize,
    /// jacobi or gauss-seidel.
    #[arg(long, default_value = "jacobi")]
    pub sweep: Sweep,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Recorded in the CSV comment line; only simulations consume it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value_t = Model::Sis)]
    pub model: Model,
}

#[derive(Args, Debug, Clone)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value_t = Model::Sis)]
    pub model: Model,
    #[arg(long, default_value_t = 10_000)]
    pub n_paths: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub dt_sim: f64,
    /// Horizon; by default the smallest one whose truncation bound is 0.01.
    #[arg(long)]
    pub t_max: Option<f64>,
    /// Initial infected fraction.
    #[arg(long, default_value_t = 0.5)]
    pub i0: f64,
    /// Initial vaccinated fraction.
    #[arg(long, default_value_t = 0.0)]
    pub v0: f64,
    /// Initial regime, 1-based.
    #[arg(long, default_value_t = 1)]
    pub regime: usize,
    /// Record this many paths in trajectories.csv.
    #[arg(long, default_value_t = 0)]
    pub trajectories: usize,
}

#[derive(Args, Debug, Clone)]
pub struct RefineArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value_t = Model::Sis)]
    pub model: Model,
    /// Comma-separated nested meshes, coarsest first (default: 4h, 2h, h).
    #[arg(long, value_delimiter = ',')]
    pub meshes: Vec<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli.command) {
        Ok(status) => status.exit_code(),
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::from(commands::error_exit_code(&e))
        }
    }
}
