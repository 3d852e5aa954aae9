//! `pflow` — command-line laboratory for perceptron learning dynamics.
//!
//! Every subcommand resolves its parameters as CLI flags ← JSON config file
//! (`--config`) ← built-in defaults, runs deterministically for a given
//! (configuration, seed) pair, and writes its outputs next to a
//! `*_manifest.json` that records everything needed to reproduce them.
//!
//! Exit codes: 0 on success, 2 for configuration errors, 3 for numerical
//! failures (divergence, thresholds not reached, identities violated).

mod drivers;
mod error;
mod manifest;
mod plot;
mod resolve;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use drivers::{
    run_cov_decay, run_fixed_point, run_flow, run_forget, run_mnist, run_simulate,
    run_specfun_check, run_sweep_anisotropy, run_sweep_noise, AnisotropySweepFlags, CovDecayFlags,
    Context, FixedPointFlags, FlowFlags, ForgetFlags, MnistFlags, NoiseSweepFlags, SimulateFlags,
};
use error::CliError;

#[derive(Parser)]
#[command(
    name = "pflow",
    version,
    about = "Flow equations, SGD ensembles and sweeps for a nonlinear perceptron",
    propagate_version = true
)]
struct Cli {
    /// JSON config file; CLI flags override it, it overrides defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Directory for CSV/SVG outputs and run manifests.
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    out_dir: PathBuf,
    /// Override the RNG seed of stochastic subcommands.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for ensemble runs (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the mean (and optionally covariance) flow equations.
    Flow(FlowFlags),
    /// Run a seeded SGD/REINFORCE ensemble and record its statistics.
    Simulate(SimulateFlags),
    /// Locate the drift fixed point |w*|, or sweep it over λ.
    FixedPoint(FixedPointFlags),
    /// Sweep time-to-threshold alignment over the input-noise scale σ.
    SweepNoise(NoiseSweepFlags),
    /// Sweep time-to-threshold over the noise-anisotropy parameter ε.
    SweepAnisotropy(AnisotropySweepFlags),
    /// Fit the covariance decay rate per noise level.
    CovDecay(CovDecayFlags),
    /// Sequential-task training: how fast is the first task forgotten?
    Forget(ForgetFlags),
    /// Compare the analytic accuracy curve against real SGD on digits 0 vs 1.
    Mnist(MnistFlags),
    /// Verify the special-function identities on dense grids.
    SpecfunCheck,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(format!("could not size the thread pool: {e}")))?;
    }
    let ctx = Context { out_dir: cli.out_dir, config_file: cli.config, seed: cli.seed };
    match &cli.command {
        Command::Flow(f) => run_flow(&ctx, f),
        Command::Simulate(f) => run_simulate(&ctx, f),
        Command::FixedPoint(f) => run_fixed_point(&ctx, f),
        Command::SweepNoise(f) => run_sweep_noise(&ctx, f),
        Command::SweepAnisotropy(f) => run_sweep_anisotropy(&ctx, f),
        Command::CovDecay(f) => run_cov_decay(&ctx, f),
        Command::Forget(f) => run_forget(&ctx, f),
        Command::Mnist(f) => run_mnist(&ctx, f),
        Command::SpecfunCheck => run_specfun_check(),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
