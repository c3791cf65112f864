use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Subcommand};
use dipgp::experiment::{corrupt, synthetic_image, ImageKind};
use dipgp::inference::Task;
use serde_json::json;

use crate::args::{load_image, out_dir, SigmaUnits};
use crate::manifest::Outputs;

#[derive(Subcommand)]
pub enum ImageCmd {
    /// Write a synthetic grayscale test image.
    Synth(SynthArgs),
    /// Add noise and drop pixels.
    Corrupt(CorruptArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    /// shapes, waves or blocks.
    #[arg(long, default_value = "shapes")]
    kind: String,
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct CorruptArgs {
    #[arg(long)]
    image: PathBuf,
    /// Noise std.
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, value_enum, default_value = "unit")]
    sigma_units: SigmaUnits,
    /// Fraction of pixels dropped; writes mask.pgm when positive.
    #[arg(long, default_value_t = 0.0)]
    drop: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(cmd: ImageCmd, argv: &[String]) -> Result<()> {
    match cmd {
        ImageCmd::Synth(a) => synth(a, argv),
        ImageCmd::Corrupt(a) => corrupt_cmd(a, argv),
    }
}

fn synth(a: SynthArgs, argv: &[String]) -> Result<()> {
    let kind = ImageKind::parse(&a.kind)?;
    let img = synthetic_image(kind, a.size)?;
    let mut out = Outputs::new(out_dir(&a.out)?);
    let path = out.image(&format!("{}.pgm", kind.name()), &img)?;
    println!("{}", path.display());
    out.finish(argv, json!({ "kind": kind.name(), "size": a.size }), 0)?;
    Ok(())
}

fn corrupt_cmd(a: CorruptArgs, argv: &[String]) -> Result<()> {
    let mut out = Outputs::new(out_dir(&a.out)?);
    out.input(&a.image);
    let clean = load_image(&a.image)?;
    let sigma = a.sigma_units.to_unit(a.sigma);
    let task = if a.drop > 0.0 { Task::Inpaint } else { Task::Denoise };
    let inst = corrupt(&clean, task, sigma, a.drop, a.seed)?;
    out.image("observed.pgm", &inst.observed)?;
    if let Some(m) = &inst.mask {
        out.image("mask.pgm", &m.as_image())?;
        println!("observed fraction {:.4}", m.fraction_observed());
    }
    let config = json!({ "sigma": sigma, "drop": a.drop });
    out.finish(argv, config, a.seed)?;
    Ok(())
}
