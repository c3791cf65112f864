use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Subcommand};
use dipgp::empirics::{compare, estimate_covariance_on, ComparisonReport};
use dipgp::kernel::{derive_kernel, write_kernel_text, KernelFile};
use dipgp::net::PresetOptions;
use dipgp::{Rng, StationaryKernel};
use serde_json::json;

use crate::args::{out_dir, ArchArgs};
use crate::manifest::Outputs;
use crate::CheckFailed;

#[derive(Subcommand)]
pub enum KernelCmd {
    /// Compile an architecture into its limiting stationary kernel.
    Derive(DeriveArgs),
    /// Compare the compiled kernel with a Monte Carlo estimate.
    Validate(ValidateArgs),
}

#[derive(Args)]
pub struct DeriveArgs {
    #[command(flatten)]
    arch: ArchArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    arch: ArchArgs,
    /// Number of sampled networks.
    #[arg(long, default_value_t = 500)]
    samples: usize,
    /// Input extent per axis.
    #[arg(long, default_value_t = 512)]
    length: usize,
    /// Largest lag compared.
    #[arg(long, default_value_t = 20)]
    lags: usize,
    /// Fail (exit 1) when the largest |ρ̂ − ρ| exceeds this.
    #[arg(long, default_value_t = 0.05)]
    threshold: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(cmd: KernelCmd, argv: &[String]) -> Result<()> {
    match cmd {
        KernelCmd::Derive(a) => derive(a, argv),
        KernelCmd::Validate(a) => validate(a, argv),
    }
}

fn rho_csv(k: &StationaryKernel) -> String {
    let l = k.half_width() as i64;
    let k0 = k.variance();
    let mut out = String::new();
    if k.dims() == 1 {
        out.push_str("lag,rho,k\n");
        for r in 0..=l {
            let v = k.get([r, 0]).unwrap_or(0.0);
            let _ = writeln!(out, "{r},{:.16e},{v:.16e}", v / k0);
        }
    } else {
        out.push_str("lag_y,lag_x,rho,k\n");
        for a in -l..=l {
            for b in -l..=l {
                let v = k.get([a, b]).unwrap_or(0.0);
                let _ = writeln!(out, "{a},{b},{:.16e},{v:.16e}", v / k0);
            }
        }
    }
    out
}

fn derive(a: DeriveArgs, argv: &[String]) -> Result<()> {
    let spec = a.arch.build("conv_2", PresetOptions::default())?;
    let d = derive_kernel(&spec)?;
    let mut out = Outputs::new(out_dir(&a.out)?);
    if let Some(p) = &a.arch.spec {
        out.input(p);
    }
    out.write("kernel.txt", write_kernel_text(&d.kernel))?;
    let file = KernelFile {
        kernel: d.kernel.clone(),
        trace: d.trace.clone(),
    };
    out.write("kernel.json", file.to_json())?;
    out.write("rho.csv", rho_csv(&d.kernel))?;
    println!("K(0) = {:.6e}", d.kernel.variance());
    if let Some(r1) = d.kernel.rho([1, 0]) {
        println!("rho(1) = {r1:.6}");
    }
    if d.approximate() {
        println!("note: upsampling steps use interpolated lags; the kernel is approximate");
    }
    out.finish(argv, json!({ "spec": spec }), 0)?;
    Ok(())
}

fn comparison_csv(r: &ComparisonReport) -> String {
    let mut out = String::from("lag,rho,rho_hat,stderr\n");
    for row in &r.rows {
        let lag: Vec<String> = row.lag.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{},{:.16e},{:.16e},{:.16e}", lag.join(" "), row.rho, row.rho_hat, row.stderr);
    }
    out
}

fn validate(a: ValidateArgs, argv: &[String]) -> Result<()> {
    let mut spec = a.arch.build("conv_2", PresetOptions::default())?;
    spec.half_width = spec.half_width.max(a.lags);
    let analytic = derive_kernel(&spec)?.kernel;
    let est = estimate_covariance_on(&spec, a.samples, a.length, a.lags, &Rng::new(a.seed, 0))?;
    let report = compare(&analytic, &est, a.lags)?;
    let mut out = Outputs::new(out_dir(&a.out)?);
    if let Some(p) = &a.arch.spec {
        out.input(p);
    }
    out.write("comparison.json", serde_json::to_string_pretty(&report)?)?;
    out.write("rho.csv", comparison_csv(&report))?;
    println!(
        "max |rho_hat - rho| over |r| <= {} with {} samples: {:.4} (threshold {})",
        a.lags, a.samples, report.max_abs_rho_err, a.threshold
    );
    let config = json!({
        "spec": spec,
        "samples": a.samples,
        "length": a.length,
        "lags": a.lags,
        "threshold": a.threshold,
    });
    out.finish(argv, config, a.seed)?;
    if report.max_abs_rho_err > a.threshold {
        return Err(CheckFailed(format!(
            "kernel validation failed: max error {:.4} > {}",
            report.max_abs_rho_err, a.threshold
        ))
        .into());
    }
    Ok(())
}
