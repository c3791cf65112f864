use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Subcommand};
use dipgp::experiment::{
    run_suite_with, sweep_channels_with, synthetic_image, toy1d, ImageKind, SuiteConfig, SweepConfig, Toy1dConfig,
    Toy1dReport,
};
use dipgp::inference::{Scheme, Task};
use dipgp::signal::ImageBuffer;
use serde_json::{json, Value};

use crate::args::{load_image, out_dir, parse_list, read_text, seed_range, SigmaUnits};
use crate::cmd_gp::fmt_db;
use crate::manifest::{merge_json, Outputs};

#[derive(Subcommand)]
pub enum ExperimentCmd {
    /// DIP inpainting PSNR against hidden width, with the GP baseline.
    SweepChannels(SweepArgs),
    /// Every scheme on every image and seed, noisy observations.
    DenoiseSuite(SuiteArgs),
    /// Every scheme on every image and seed, dropped pixels.
    InpaintSuite(SuiteArgs),
    /// 1D covariance curves, prior samples and a GP posterior.
    Toy1d(ToyArgs),
}

/// Test images: files, else synthetic kinds.
#[derive(Args)]
pub struct ImageArgs {
    /// Comma-separated image files; overrides --kinds.
    #[arg(long)]
    images: Option<String>,
    /// Comma-separated synthetic kinds: shapes, waves, blocks.
    #[arg(long, default_value = "shapes,waves,blocks")]
    kinds: String,
    /// Side of the synthetic images.
    #[arg(long, default_value_t = 32)]
    size: usize,
}

impl ImageArgs {
    fn load(&self, out: &mut Outputs) -> Result<Vec<(String, ImageBuffer)>> {
        if let Some(list) = &self.images {
            return parse_list::<PathBuf>(list)?
                .into_iter()
                .map(|p| {
                    out.input(&p);
                    let name = p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into());
                    Ok((name, load_image(&p)?))
                })
                .collect();
        }
        parse_list::<String>(&self.kinds)?
            .iter()
            .map(|k| {
                let kind = ImageKind::parse(k)?;
                Ok((kind.name().to_string(), synthetic_image(kind, self.size)?))
            })
            .collect()
    }
}

#[derive(Args)]
pub struct SuiteArgs {
    #[command(flatten)]
    images: ImageArgs,
    /// Comma-separated schemes. Default: all five.
    #[arg(long)]
    schemes: Option<String>,
    /// Number of seeds.
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed_base: u64,
    /// Corruption noise std.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, value_enum, default_value = "unit")]
    sigma_units: SigmaUnits,
    /// Fraction of pixels dropped (inpainting).
    #[arg(long)]
    drop: Option<f64>,
    /// Hidden channels of the network.
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    sgld_lr: Option<f64>,
    #[arg(long)]
    sigma_n: Option<f64>,
    /// Suite config JSON (partial) overlaid on the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct SweepArgs {
    /// Clean image file. Default: a synthetic image.
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long, default_value = "shapes")]
    kind: String,
    #[arg(long, default_value_t = 32)]
    size: usize,
    /// Comma-separated hidden widths.
    #[arg(long)]
    channels: Option<String>,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    drop: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    gp_sigma_n: Option<f64>,
    /// Sweep config JSON (partial) overlaid on the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ToyArgs {
    /// Comma-separated depths.
    #[arg(long)]
    depths: Option<String>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    length: Option<usize>,
    #[arg(long)]
    drop: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(cmd: ExperimentCmd, argv: &[String]) -> Result<()> {
    match cmd {
        ExperimentCmd::SweepChannels(a) => sweep(a, argv),
        ExperimentCmd::DenoiseSuite(a) => suite(Task::Denoise, a, argv),
        ExperimentCmd::InpaintSuite(a) => suite(Task::Inpaint, a, argv),
        ExperimentCmd::Toy1d(a) => toy(a, argv),
    }
}

/// `defaults` with the JSON file at `path` overlaid.
fn overlay<T: serde::Serialize + serde::de::DeserializeOwned>(
    defaults: &T,
    path: &Option<PathBuf>,
    out: &mut Outputs,
) -> Result<T> {
    let Some(p) = path else {
        return Ok(serde_json::from_value(serde_json::to_value(defaults)?)?);
    };
    out.input(p);
    let patch: Value = serde_json::from_str(&read_text(p)?).with_context(|| format!("parsing {}", p.display()))?;
    let mut v = serde_json::to_value(defaults)?;
    merge_json(&mut v, &patch);
    serde_json::from_value(v).with_context(|| format!("invalid config {}", p.display()))
}

fn suite(task: Task, a: SuiteArgs, argv: &[String]) -> Result<()> {
    let mut out = Outputs::new(out_dir(&a.out)?);
    let mut c: SuiteConfig = overlay(&SuiteConfig::desk(task), &a.config, &mut out)?;
    if let Some(s) = &a.schemes {
        c.schemes = parse_list::<String>(s)?.iter().map(|n| Scheme::parse(n)).collect::<dipgp::Result<_>>()?;
    }
    if let Some(n) = a.seeds {
        c.seeds = seed_range(a.seed_base, n);
    } else if a.seed_base != 0 {
        c.seeds = seed_range(a.seed_base, c.seeds.len());
    }
    if let Some(s) = a.sigma {
        c.noise_sigma = a.sigma_units.to_unit(s);
        if a.sigma_n.is_none() && task == Task::Denoise {
            c.inference.sigma_n = c.noise_sigma;
        }
    }
    if let Some(d) = a.drop {
        c.drop_fraction = d;
    }
    if let Some(ch) = a.channels {
        c.setup = c.setup.with_channels(ch);
    }
    if let Some(v) = a.iterations {
        c.inference.iterations = v;
    }
    if let Some(v) = a.burn_in {
        c.inference.burn_in = v;
    }
    if let Some(v) = a.lr {
        c.inference.lr = v;
    }
    if a.sgld_lr.is_some() {
        c.inference.sgld_lr = a.sgld_lr;
    }
    if let Some(v) = a.sigma_n {
        c.inference.sigma_n = v;
    }
    c.inference.validate()?;
    let images = a.images.load(&mut out)?;
    let started = Instant::now();
    let lock = Mutex::new(());
    let report = run_suite_with(&images, &c, a.jobs, |r| {
        let _guard = lock.lock();
        eprintln!(
            "{} {} seed {}: psnr {} [{:.0}s]",
            r.image,
            r.scheme.name(),
            r.seed,
            fmt_db(r.psnr),
            started.elapsed().as_secs_f64()
        );
    })?;
    let table = report.table();
    print!("{table}");
    out.write("table.md", &table)?;
    out.write("runs.csv", report.to_csv())?;
    out.write("report.json", serde_json::to_string_pretty(&report)?)?;
    let seed = c.seeds.first().copied().unwrap_or(0);
    out.finish(argv, json!({ "suite": c, "images": report.images }), seed)?;
    Ok(())
}

fn sweep(a: SweepArgs, argv: &[String]) -> Result<()> {
    let mut out = Outputs::new(out_dir(&a.out)?);
    let mut c: SweepConfig = overlay(&SweepConfig::desk(), &a.config, &mut out)?;
    if let Some(s) = &a.channels {
        c.channels = parse_list(s)?;
    }
    if let Some(n) = a.seeds {
        c.seeds = seed_range(0, n);
    }
    if let Some(d) = a.drop {
        c.drop_fraction = d;
    }
    if let Some(v) = a.iterations {
        c.inference.iterations = v;
        c.inference.burn_in = c.inference.burn_in.min(v.saturating_sub(1));
    }
    if let Some(v) = a.lr {
        c.inference.lr = v;
    }
    if let Some(v) = a.gp_sigma_n {
        c.gp_sigma_n = v;
    }
    c.inference.validate()?;
    let clean = match &a.image {
        Some(p) => {
            out.input(p);
            load_image(p)?
        }
        None => synthetic_image(ImageKind::parse(&a.kind)?, a.size)?,
    };
    let report = sweep_channels_with(&clean, &c, |ch, seed, p| {
        eprintln!("dip C={ch} seed {seed}: psnr {}", fmt_db(p));
    })?;
    for row in &report.rows {
        let label = row.channels.map_or_else(|| row.method.clone(), |ch| format!("{} C={ch}", row.method));
        println!("{label}: median psnr {}", fmt_db(row.median));
    }
    out.write("sweep.csv", report.to_csv())?;
    out.write("sweep.json", serde_json::to_string_pretty(&report)?)?;
    out.finish(argv, json!({ "sweep": c }), c.instance_seed)?;
    Ok(())
}

fn toy(a: ToyArgs, argv: &[String]) -> Result<()> {
    let mut c = Toy1dConfig::default();
    if let Some(d) = &a.depths {
        c.depths = parse_list(d)?;
    }
    if let Some(v) = a.channels {
        c.channels = v;
    }
    if let Some(v) = a.length {
        c.length = v;
    }
    if let Some(v) = a.drop {
        c.drop_fraction = v;
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
    let report = toy1d(&c)?;
    let mut out = Outputs::new(out_dir(&a.out)?);
    for curve in &report.curves {
        out.write(&format!("rho_{}_{}.csv", curve.preset, curve.depth), Toy1dReport::curve_csv(curve))?;
        println!(
            "{}_{}: rho(1) = {:.4}",
            curve.preset,
            curve.depth,
            curve.rho.get(1).copied().unwrap_or(f64::NAN)
        );
    }
    for p in &report.prior {
        out.write(&format!("prior_{}_{}.csv", p.preset, p.depth), Toy1dReport::prior_csv(p))?;
    }
    out.write("posterior.csv", report.posterior_csv())?;
    out.finish(argv, json!({ "toy1d": c }), c.seed)?;
    Ok(())
}
