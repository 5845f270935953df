//! Command line front end for variety-constrained sampling.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod io;
mod spec_file;

#[derive(Parser)]
#[command(name = "variety", version, about = "Sample from and project onto real algebraic varieties")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw samples concentrated near a variety
    Sample(SampleArgs),
    /// Project points from a CSV file onto a variety
    Project(ProjectArgs),
    /// Append an objective column to a CSV of points
    Eval(EvalArgs),
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
pub enum Sampler {
    Rejection,
    Hmc,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Args)]
pub struct SampleArgs {
    /// Spec file path, or catalog name with optional parameters
    /// (e.g. `circle`, `kuramoto:N=5`)
    #[arg(long)]
    pub system: String,

    #[arg(long, value_enum)]
    pub sampler: Sampler,

    /// Proposals (rejection) or kept draws per chain (hmc)
    #[arg(long)]
    pub n: u64,

    /// Number of chains (hmc only)
    #[arg(long, default_value_t = 4)]
    pub chains: u32,

    /// Concentration scale; the density uses its square
    #[arg(long)]
    pub sigma: Option<f64>,

    /// Proposal/init box as lo,hi pairs; a single pair broadcasts to
    /// every axis
    #[arg(long, value_name = "LO,HI[,LO,HI...]", allow_hyphen_values = true)]
    pub r#box: Option<String>,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Project every accepted draw onto the variety
    #[arg(long)]
    pub project: bool,

    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,

    /// Output file (stdout when omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Write the run summary JSON here instead of stderr
    #[arg(long)]
    pub summary: Option<PathBuf>,

    /// Accept inside |residual| <= EPS instead of density thinning
    /// (rejection only)
    #[arg(long, value_name = "EPS")]
    pub band: Option<f64>,

    /// Discarded transitions per chain before sampling (hmc)
    #[arg(long, default_value_t = 1000)]
    pub warmup: u64,

    /// Initial leapfrog step size (hmc; adapted during warmup)
    #[arg(long, default_value_t = 0.1)]
    pub step_size: f64,

    /// Leapfrog steps per transition (hmc)
    #[arg(long, default_value_t = 32)]
    pub leapfrog: u32,

    /// Diagonal mass (hmc)
    #[arg(long, default_value_t = 1.0)]
    pub mass: f64,

    /// Acceptance rate targeted by step size adaptation (hmc)
    #[arg(long, default_value_t = 0.8)]
    pub target_accept: f64,
}

#[derive(Args)]
pub struct ProjectArgs {
    /// Spec file path or catalog name; equalities only
    #[arg(long)]
    pub system: String,

    /// CSV of starting points with one column per variable
    #[arg(long, value_name = "FILE")]
    pub r#in: PathBuf,

    /// Output file (stdout when omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Seed for the random projection frames
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Spec file path or catalog name; supplies the variable names
    #[arg(long)]
    pub system: String,

    /// CSV of points with one column per variable
    #[arg(long, value_name = "FILE")]
    pub r#in: PathBuf,

    /// Objective to evaluate, e.g. loglik:counts=8,8,1,3
    #[arg(long)]
    pub objective: String,

    /// Output file (stdout when omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Command::Sample(args) => commands::cmd_sample(args),
        Command::Project(args) => commands::cmd_project(args),
        Command::Eval(args) => commands::cmd_eval(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
