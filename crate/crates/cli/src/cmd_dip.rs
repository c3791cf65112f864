use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand, ValueEnum};
use dipgp::experiment::DipSetup;
use dipgp::inference::{self, InferenceConfig, Optimizer, Problem, RunOutput, Scheme, Task};
use dipgp::net::write_checkpoint;
use dipgp::signal::{psnr, read_signal_csv, ImageBuffer, Signal};
use dipgp::{NetworkSpec, Tensor};
use serde_json::{json, Value};

use crate::args::{load_image, load_mask, out_dir, read_text, ArchArgs};
use crate::cmd_gp::fmt_db;
use crate::manifest::{merge_json, Outputs};

#[derive(Subcommand)]
pub enum DipCmd {
    /// Train one network on one corrupted image with one scheme.
    Run(RunArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TaskArg {
    Denoise,
    Inpaint,
    Fit1d,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum OptimizerArg {
    Sgd,
    Adam,
}

#[derive(Args)]
pub struct RunArgs {
    #[arg(long, value_enum, default_value = "denoise")]
    task: TaskArg,
    /// Corrupted image (denoise, inpaint).
    #[arg(long)]
    image: Option<PathBuf>,
    /// Signal CSV with observation flags (fit1d).
    #[arg(long)]
    signal: Option<PathBuf>,
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    clean: Option<PathBuf>,
    /// sgd, sgd_avg, sgd_input, sgd_input_avg or sgld.
    #[arg(long)]
    scheme: Option<String>,
    /// Inference config JSON (partial), or a manifest from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    arch: ArchArgs,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    sgld_lr: Option<f64>,
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerArg>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    sigma_n: Option<f64>,
    #[arg(long)]
    sigma_p: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    ema_decay: Option<f64>,
    #[arg(long)]
    eval_every: Option<usize>,
    /// Disable the SGLD noise (the update reduces to gradient descent).
    #[arg(long)]
    no_noise: bool,
    /// Train the network input along with the weights.
    #[arg(long)]
    optimize_input: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn task_of(t: TaskArg) -> Task {
    match t {
        TaskArg::Denoise => Task::Denoise,
        TaskArg::Inpaint => Task::Inpaint,
        TaskArg::Fit1d => Task::Fit1d,
    }
}

pub fn run_cmd(a: RunArgs, argv: &[String]) -> Result<()> {
    let task = task_of(a.task);
    let file: Option<Value> = match &a.config {
        Some(p) => Some(serde_json::from_str(&read_text(p)?).with_context(|| format!("parsing {}", p.display()))?),
        None => None,
    };
    // a manifest carries the resolved config under "config"
    let (file_inference, file_spec) = match &file {
        Some(v) if v.get("config").is_some() => (v["config"].get("inference").cloned(), v["config"].get("spec").cloned()),
        Some(v) => (Some(v.clone()), None),
        None => (None, None),
    };
    let scheme = match (&a.scheme, file_inference.as_ref().and_then(|v| v.get("scheme"))) {
        (Some(s), _) => Scheme::parse(s)?,
        (None, Some(s)) => serde_json::from_value(s.clone())?,
        (None, None) => Scheme::Sgd,
    };
    let mut merged = serde_json::to_value(InferenceConfig::defaults(task, scheme))?;
    if let Some(v) = &file_inference {
        merge_json(&mut merged, v);
    }
    let mut config: InferenceConfig = serde_json::from_value(merged).context("invalid inference config")?;
    config.scheme = scheme;
    apply_flags(&a, &mut config);
    config.validate()?;

    let mut out = Outputs::new(out_dir(&a.out)?);
    if let Some(p) = &a.config {
        out.input(p);
    }
    let data = load_problem(&a, task, &mut out)?;
    let arch_given = a.arch.spec.is_some() || a.arch.preset.is_some();
    let spec = match (&file_spec, arch_given) {
        (Some(s), false) => serde_json::from_value::<NetworkSpec>(s.clone())?,
        _ => {
            let setup = DipSetup::unet(16);
            let mut base = setup.options.clone();
            base.dims = data.dims;
            base.out_channels = Some(data.channels);
            let spec = a.arch.build(&setup.preset, base)?;
            if let Some(p) = &a.arch.spec {
                out.input(p);
            }
            spec
        }
    };
    let problem = Problem {
        task,
        target: &data.target,
        mask: data.mask.as_ref(),
        clean: data.clean.as_ref(),
    };
    let resolved = json!({
        "task": task,
        "inference": config,
        "spec": spec,
    });
    let result = inference::run(&problem, &spec, &config);
    let output = match result {
        Ok(o) => o,
        Err(f) => {
            out.write("trace.csv", f.trace.to_csv())?;
            out.finish(argv, resolved, config.seed)?;
            return Err(f).context("training failed");
        }
    };
    write_outputs(&output, &data, &mut out)?;
    out.finish(argv, resolved, config.seed)?;
    Ok(())
}

pub fn run(cmd: DipCmd, argv: &[String]) -> Result<()> {
    match cmd {
        DipCmd::Run(a) => run_cmd(a, argv),
    }
}

fn apply_flags(a: &RunArgs, c: &mut InferenceConfig) {
    if let Some(v) = a.lr {
        c.lr = v;
    }
    if a.sgld_lr.is_some() {
        c.sgld_lr = a.sgld_lr;
    }
    if let Some(o) = a.optimizer {
        c.optimizer = match o {
            OptimizerArg::Sgd => Optimizer::Sgd,
            OptimizerArg::Adam => Optimizer::adam(),
        };
    }
    if let Some(v) = a.iterations {
        c.iterations = v;
    }
    if let Some(v) = a.burn_in {
        c.burn_in = v;
    }
    if let Some(v) = a.sigma_n {
        c.sigma_n = v;
    }
    if let Some(v) = a.sigma_p {
        c.sigma_p = v;
    }
    if a.weight_decay.is_some() {
        c.weight_decay = a.weight_decay;
    }
    if let Some(v) = a.ema_decay {
        c.ema_decay = v;
    }
    if let Some(v) = a.eval_every {
        c.eval_every = v;
    }
    if a.no_noise {
        c.noise_injection = false;
    }
    if a.optimize_input {
        c.optimize_input = true;
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
}

struct Data {
    dims: usize,
    channels: usize,
    target: Tensor,
    mask: Option<Tensor>,
    clean: Option<Tensor>,
    /// Image geometry, absent for 1D signals.
    image: Option<(usize, usize)>,
    signal: Option<Signal>,
}

fn load_problem(a: &RunArgs, task: Task, out: &mut Outputs) -> Result<Data> {
    if task == Task::Fit1d {
        let Some(p) = &a.signal else {
            bail!("--task fit1d needs --signal");
        };
        out.input(p);
        let signal = read_signal_csv(&read_text(p)?)?;
        if signal.positions.iter().enumerate().any(|(i, &x)| x != i as i64) {
            bail!("signal positions must be 0, 1, 2, ...");
        }
        let target = Tensor::new(vec![1, signal.len()], signal.values.clone())?;
        let mask = Tensor::new(
            vec![1, signal.len()],
            signal.observed.iter().map(|&o| f64::from(u8::from(o))).collect(),
        )?;
        return Ok(Data {
            dims: 1,
            channels: 1,
            target,
            mask: Some(mask),
            clean: None,
            image: None,
            signal: Some(signal),
        });
    }
    let Some(p) = &a.image else {
        bail!("--image is required for {task:?}");
    };
    out.input(p);
    let img = load_image(p)?;
    let mask = match (&a.mask, task) {
        (Some(m), _) => {
            out.input(m);
            Some(load_mask(m, img.height, img.width)?.to_tensor(img.channels))
        }
        (None, Task::Inpaint) => bail!("--task inpaint needs --mask"),
        (None, _) => None,
    };
    let clean = match &a.clean {
        Some(c) => {
            out.input(c);
            let clean = load_image(c)?;
            if (clean.height, clean.width, clean.channels) != (img.height, img.width, img.channels) {
                bail!("clean reference does not match the image geometry");
            }
            Some(clean.to_tensor())
        }
        None => None,
    };
    Ok(Data {
        dims: 2,
        channels: img.channels,
        target: img.to_tensor(),
        mask,
        clean,
        image: Some((img.height, img.width)),
        signal: None,
    })
}

fn write_outputs(o: &RunOutput, data: &Data, out: &mut Outputs) -> Result<()> {
    out.write("trace.csv", o.trace.to_csv())?;
    let mut ckpt = Vec::new();
    write_checkpoint(&mut ckpt, &o.params, o.trace.rows.last().map_or(0, |r| r.iter as u64 + 1))?;
    out.write("params.ckpt", ckpt)?;
    let mut summary = json!({
        "weight_decay": o.weight_decay,
        "final_mse_noisy": o.trace.rows.last().map(|r| r.mse_noisy),
        "post_burn_in_mse": o.post_burn_in_mse,
    });
    if data.image.is_some() {
        let est = ImageBuffer::from_tensor(&o.output)?;
        out.image("estimate.pgm", &est)?;
        out.image("last_iterate.pgm", &ImageBuffer::from_tensor(&o.last_iterate)?)?;
        if let Some(p) = &o.posterior {
            let var = ImageBuffer::from_tensor(&p.variance)?;
            summary["max_variance"] = json!(var.values.iter().cloned().fold(0.0, f64::max));
            out.image("variance.pgm", &var.normalized())?;
        }
        if let Some(c) = &data.clean {
            let clean = ImageBuffer::from_tensor(c)?;
            let p = psnr(&est, &clean, None)?;
            println!("psnr {}", fmt_db(p));
            summary["psnr"] = json!(fmt_db(p));
        }
        if let Some(b) = &o.best {
            out.image("best.pgm", &ImageBuffer::from_tensor(&b.output)?)?;
            println!("oracle best psnr {} at iteration {}", fmt_db(b.psnr), b.iter);
            summary["best_psnr"] = json!(fmt_db(b.psnr));
            summary["best_iter"] = json!(b.iter);
        }
    }
    if let Some(s) = &data.signal {
        let mut csv = String::from("position,value,observed,estimate,variance\n");
        for i in 0..s.len() {
            let var = o.posterior.as_ref().map(|p| p.variance.data()[i]);
            csv.push_str(&format!(
                "{},{:.16e},{},{:.16e},{}\n",
                s.positions[i],
                s.values[i],
                u8::from(s.observed[i]),
                o.output.data()[i],
                var.map(|v| format!("{v:.16e}")).unwrap_or_default()
            ));
        }
        out.write("estimate.csv", csv)?;
    }
    out.write("summary.json", serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}
