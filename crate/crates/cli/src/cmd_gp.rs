use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, Subcommand};
use dipgp::gp::{fit_rbf, pixel_points, posterior_image, sample_prior, NoiseModel};
use dipgp::kernel::{derive_kernel, KernelFile, Point};
use dipgp::net::PresetOptions;
use dipgp::signal::{psnr, ImageBuffer, Mask};
use dipgp::{InputKernel, Rng, StationaryKernel};
use serde_json::json;

use crate::args::{load_image, load_mask, out_dir, parse_list, ArchArgs};
use crate::manifest::Outputs;

#[derive(Subcommand)]
pub enum GpCmd {
    /// Draw prior samples on a grid.
    Sample(SampleArgs),
    /// Posterior mean and variance of an image from its observed pixels.
    Infer(InferArgs),
    /// Grid-search the RBF lengthscale by marginal likelihood.
    FitRbf(FitRbfArgs),
}

/// Kernel source: a kernel file, else the architecture flags.
#[derive(Args)]
pub struct KernelSource {
    /// Kernel file (text or JSON) from `kernel derive`.
    #[arg(long)]
    kernel: Option<PathBuf>,
    #[command(flatten)]
    arch: ArchArgs,
}

impl KernelSource {
    /// The kernel, with a lag grid wide enough for a `span`-sample extent
    /// when it is compiled here.
    fn load(&self, dims: usize, span: usize, out: &mut Outputs) -> Result<StationaryKernel> {
        if let Some(p) = &self.kernel {
            out.input(p);
            return Ok(KernelFile::load(p)?.kernel);
        }
        let base = PresetOptions {
            dims,
            input_kernel: InputKernel::GaussianFiltered {
                sigma: 1.0,
                filter_std: 2.0,
            },
            ..Default::default()
        };
        let mut spec = self.arch.build("conv_2", base)?;
        if let Some(p) = &self.arch.spec {
            out.input(p);
        }
        spec.half_width = spec.half_width.max(span);
        Ok(derive_kernel(&spec)?.kernel)
    }
}

#[derive(Args)]
pub struct SampleArgs {
    #[command(flatten)]
    source: KernelSource,
    /// Grid side (2D) or length (1D).
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 3)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct InferArgs {
    #[command(flatten)]
    source: KernelSource,
    /// Observed image; unobserved pixel values are ignored.
    #[arg(long)]
    image: PathBuf,
    /// Mask image, nonzero where observed. Default: all observed.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Clean reference for PSNR.
    #[arg(long)]
    clean: Option<PathBuf>,
    /// Observation noise std on the [0, 1] scale.
    #[arg(long, default_value_t = 1e-3)]
    sigma_n: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct FitRbfArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Comma-separated lengthscales in pixels.
    #[arg(long, default_value = "0.5,1,2,4,8,16")]
    grid: String,
    #[arg(long, default_value_t = 1e-3)]
    sigma_n: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(cmd: GpCmd, argv: &[String]) -> Result<()> {
    match cmd {
        GpCmd::Sample(a) => sample(a, argv),
        GpCmd::Infer(a) => infer(a, argv),
        GpCmd::FitRbf(a) => fit(a, argv),
    }
}

fn noise(sigma_n: f64) -> Result<NoiseModel> {
    Ok(if sigma_n == 0.0 {
        NoiseModel::noiseless()
    } else {
        NoiseModel::new(sigma_n)?
    })
}

fn sample(a: SampleArgs, argv: &[String]) -> Result<()> {
    let mut out = Outputs::new(out_dir(&a.out)?);
    let k = a.source.load(a.source.arch.dims.unwrap_or(2), a.size, &mut out)?;
    let dims = k.dims();
    let points: Vec<Point> = if dims == 1 {
        (0..a.size as i64).map(|t| [t, 0]).collect()
    } else {
        pixel_points(a.size, a.size)
    };
    let mut rng = Rng::new(a.seed, 0);
    let samples = sample_prior(&k, &points, &mut rng, a.count)?;
    let mut csv = String::from(if dims == 1 { "position" } else { "row,col" });
    for i in 0..samples.len() {
        let _ = write!(csv, ",sample{i}");
    }
    csv.push('\n');
    for (j, p) in points.iter().enumerate() {
        let coords = if dims == 1 { p[0].to_string() } else { format!("{},{}", p[0], p[1]) };
        let vals: Vec<String> = samples.iter().map(|s| format!("{:.16e}", s[j])).collect();
        let _ = writeln!(csv, "{coords},{}", vals.join(","));
    }
    out.write("samples.csv", csv)?;
    if dims == 2 {
        for (i, s) in samples.iter().enumerate() {
            let img = ImageBuffer::new(a.size, a.size, 1, s.clone())?.normalized();
            out.image(&format!("sample_{i}.pgm"), &img)?;
        }
    }
    println!("wrote {} samples to {}", samples.len(), out.dir.display());
    out.finish(argv, json!({ "kernel": k, "size": a.size, "count": a.count }), a.seed)?;
    Ok(())
}

fn infer(a: InferArgs, argv: &[String]) -> Result<()> {
    let mut out = Outputs::new(out_dir(&a.out)?);
    let img = load_image(&a.image)?;
    out.input(&a.image);
    let mask = match &a.mask {
        Some(p) => {
            out.input(p);
            load_mask(p, img.height, img.width)?
        }
        None => Mask::full(img.height, img.width),
    };
    let k = a.source.load(2, img.height.max(img.width), &mut out)?;
    if k.dims() != 2 {
        bail!("images need a 2D kernel, got a {}D one (derive with --dims 2)", k.dims());
    }
    let (mean, var, jitter) = posterior_image(&k, &img, &mask, noise(a.sigma_n)?)?;
    out.image("mean.pgm", &mean)?;
    out.image("variance.pgm", &var.normalized())?;
    let max_var = var.values.iter().cloned().fold(0.0, f64::max);
    let mut report = json!({
        "observed_fraction": mask.fraction_observed(),
        "jitter": jitter,
        "max_variance": max_var,
    });
    if let Some(c) = &a.clean {
        out.input(c);
        let clean = load_image(c)?;
        let p = psnr(&mean, &clean, None)?;
        println!("psnr {}", fmt_db(p));
        report["psnr"] = json!(fmt_db(p));
    }
    out.write("report.json", serde_json::to_string_pretty(&report)?)?;
    out.finish(argv, json!({ "kernel": k, "sigma_n": a.sigma_n }), 0)?;
    Ok(())
}

/// PSNR as text, with `inf` for identical images.
pub fn fmt_db(p: f64) -> String {
    if p.is_infinite() {
        "inf".into()
    } else {
        format!("{p:.4}")
    }
}

fn fit(a: FitRbfArgs, argv: &[String]) -> Result<()> {
    let mut out = Outputs::new(out_dir(&a.out)?);
    let img = load_image(&a.image)?;
    out.input(&a.image);
    let mask = match &a.mask {
        Some(p) => {
            out.input(p);
            load_mask(p, img.height, img.width)?
        }
        None => Mask::full(img.height, img.width),
    };
    let all = pixel_points(img.height, img.width);
    let (points, values): (Vec<Point>, Vec<f64>) = all
        .iter()
        .enumerate()
        .filter(|&(i, _)| mask.observed[i])
        .map(|(i, p)| (*p, img.values[i * img.channels]))
        .unzip();
    let grid: Vec<f64> = parse_list(&a.grid)?;
    let fit = fit_rbf(&points, &values, noise(a.sigma_n)?, &grid)?;
    println!(
        "lengthscale {} log marginal likelihood {:.6}",
        fit.kernel.lengthscale, fit.log_marginal_likelihood
    );
    out.write("fit.json", serde_json::to_string_pretty(&fit)?)?;
    out.finish(argv, json!({ "grid": grid, "sigma_n": a.sigma_n }), 0)?;
    Ok(())
}
