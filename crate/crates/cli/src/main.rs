//! `dipgp`: derive network kernels, run GP and deep-image-prior
//! reconstructions, and drive the composite experiments.
//!
//! Exit codes: 0 success, 1 numerical failure, 2 usage error.

mod args;
mod cmd_dip;
mod cmd_experiment;
mod cmd_gp;
mod cmd_image;
mod cmd_kernel;
mod manifest;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "dipgp", version, about = "Gaussian-process kernels and deep image priors of convolutional networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compile architectures into kernels and check them by Monte Carlo.
    #[command(subcommand)]
    Kernel(cmd_kernel::KernelCmd),
    /// Exact GP prior samples, posterior inference and RBF fitting.
    #[command(subcommand)]
    Gp(cmd_gp::GpCmd),
    /// Deep-image-prior reconstruction.
    #[command(subcommand)]
    Dip(cmd_dip::DipCmd),
    /// Channel sweeps, scheme suites and the 1D toy.
    #[command(subcommand)]
    Experiment(cmd_experiment::ExperimentCmd),
    /// Synthetic test images and corruptions.
    #[command(subcommand)]
    Image(cmd_image::ImageCmd),
}

/// A check that ran but did not meet its threshold.
#[derive(Debug)]
pub struct CheckFailed(pub String);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<CheckFailed>().is_some() {
        return 1;
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<dipgp::Error>() {
            return if e.is_numerical() { 1 } else { 2 };
        }
        if let Some(f) = cause.downcast_ref::<dipgp::inference::RunFailure>() {
            return if f.error.is_numerical() { 1 } else { 2 };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let argv: Vec<String> = std::env::args().collect();
    let result = match cli.command {
        Command::Kernel(c) => cmd_kernel::run(c, &argv),
        Command::Gp(c) => cmd_gp::run(c, &argv),
        Command::Dip(c) => cmd_dip::run(c, &argv),
        Command::Experiment(c) => cmd_experiment::run(c, &argv),
        Command::Image(c) => cmd_image::run(c, &argv),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
