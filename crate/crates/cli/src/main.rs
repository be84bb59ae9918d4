//! `gpgrid` command-line front end.
//!
//! Exit codes: 0 success, 1 numerical failure (non-convergence, failed oracle
//! checks, indefinite matrices), 2 usage or input errors.

mod common;
mod generate;
mod oracle;
mod predict;
mod reconstruct;
mod study;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use common::CliError;

#[derive(Parser)]
#[command(name = "gpgrid", version, about = "Gaussian-process regression on gappy grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset.
    Generate(GenerateArgs),
    /// Fill the gaps of a dataset and write the fitted model.
    Reconstruct(ReconstructArgs),
    /// Time the gap formulations across gappiness levels.
    Sweep(SweepArgs),
    /// Measure preconditioner efficacy across ranks and lengthscales.
    PreconStudy(PreconStudyArgs),
    /// Posterior means and variances from a fitted model.
    Predict(PredictArgs),
    /// Compare every solver route against a dense direct solve.
    OracleCheck(OracleCheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum GenerateKind {
    Rastrigin,
    Wave,
}

#[derive(Args)]
struct GenerateArgs {
    kind: GenerateKind,
    #[arg(long)]
    nx: usize,
    #[arg(long)]
    ny: usize,
    /// Frames (wave only).
    #[arg(long)]
    nt: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    wave_speed: f64,
    /// Time step (wave only); defaults to half the CFL limit.
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long, default_value_t = 10)]
    smoothing_passes: usize,
    /// Mask this fraction of cells after generating.
    #[arg(long)]
    gappiness: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dataset manifest to write (payloads go alongside).
    #[arg(long)]
    out: PathBuf,
}

/// Kernel and noise settings shared by several commands.
#[derive(Args, Clone, Default)]
struct KernelArgs {
    /// Hyperparameter JSON (`axes`, `amplitude`, `noise_variance`).
    #[arg(long)]
    hyper: Option<PathBuf>,
    /// Isotropic SE lengthscale.
    #[arg(long, conflicts_with = "lengthscales")]
    theta: Option<f64>,
    /// Per-axis SE lengthscales, comma separated.
    #[arg(long, value_delimiter = ',')]
    lengthscales: Option<Vec<f64>>,
    /// Signal variance.
    #[arg(long)]
    amplitude: Option<f64>,
    /// Noise variance.
    #[arg(long)]
    sigma2: Option<f64>,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// JSON settings file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    method: Option<gpgrid::Method>,
    /// Re-mask the dataset with this fraction of gaps (needs ground truth).
    #[arg(long)]
    gappiness: Option<f64>,
    /// Preconditioner rank.
    #[arg(long)]
    rank: Option<usize>,
    /// PG penalty.
    #[arg(long)]
    gamma: Option<f64>,
    /// FG preconditioner shift.
    #[arg(long)]
    zeta: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Maximize the marginal likelihood before the final solve.
    #[arg(long)]
    train: bool,
    #[command(flatten)]
    kernel: KernelArgs,
    /// Model manifest to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep configuration JSON; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    source: Option<study::SourceKind>,
    /// Grid shape such as `100x100`; repeat for several sizes.
    #[arg(long)]
    size: Vec<String>,
    /// Comma-separated gap fractions; an empty value gives an empty sweep.
    #[arg(long)]
    gappiness: Option<String>,
    /// Methods with optional rank, e.g. `pg,ig,fg,ig:50`.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    amplitude: Option<f64>,
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = "GPGRID_JOBS")]
    jobs: Option<usize>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct PreconStudyArgs {
    /// Study configuration JSON; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Grid is n × n on the unit square.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    gappiness: Option<f64>,
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    thetas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    ranks: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<gpgrid::Method>>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long, env = "GPGRID_JOBS")]
    jobs: Option<usize>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
enum VarianceKind {
    None,
    Exact,
    Nystrom,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Test-grid axis `lo:hi:n`, one per dimension.
    #[arg(long, conflicts_with = "points", allow_hyphen_values = true)]
    axis: Vec<String>,
    /// CSV of test points, one per row.
    #[arg(long)]
    points: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = VarianceKind::None)]
    variance: VarianceKind,
    /// Solver for exact variances.
    #[arg(long, default_value = "fg")]
    method: gpgrid::Method,
    /// Nyström rank for approximate variances.
    #[arg(long, default_value_t = 100)]
    rank: usize,
    /// CG tolerance for variance solves.
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OracleCheckArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    gappiness: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    kernel: KernelArgs,
    /// CG tolerance for the weight solves.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = gpgrid::harness::DEFAULT_ORACLE_CAP)]
    cap: usize,
    /// CSV of points for mean and variance checks; defaults to a few grid cells.
    #[arg(long)]
    points: Option<PathBuf>,
    /// JSON report with oracle values.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(a) => generate::run(a),
        Command::Reconstruct(a) => reconstruct::run(a),
        Command::Sweep(a) => study::run_sweep(a),
        Command::PreconStudy(a) => study::run_precon(a),
        Command::Predict(a) => predict::run(a),
        Command::OracleCheck(a) => oracle::run(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
