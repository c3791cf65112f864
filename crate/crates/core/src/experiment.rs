//! Composite experiments: synthetic test images, scheme suites, the
//! channel sweep against the derived-kernel GP, and the 1D toy.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::empirics::sample_output;
use crate::error::{Error, Result};
use crate::gp::{posterior, posterior_image, NoiseModel};
use crate::inference::{run, InferenceConfig, Optimizer, Problem, RunOutput, Scheme, Task};
use crate::kernel::{derive_kernel, Point};
use crate::net::{preset, InputKernel, NetworkSpec, PresetOptions};
use crate::rng::Rng;
use crate::signal::{add_noise, psnr, random_mask, ImageBuffer, Mask, Signal};
use crate::tensor::Padding;

/// Deterministic grayscale test images.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageKind {
    /// Disk and rectangle over a smooth sinusoidal background.
    Shapes,
    /// Superposed oblique waves of two frequencies.
    Waves,
    /// Piecewise-constant blocks with a linear ramp.
    Blocks,
}

impl ImageKind {
    pub const ALL: [ImageKind; 3] = [ImageKind::Shapes, ImageKind::Waves, ImageKind::Blocks];

    pub fn name(self) -> &'static str {
        match self {
            ImageKind::Shapes => "shapes",
            ImageKind::Waves => "waves",
            ImageKind::Blocks => "blocks",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::invalid(format!("unknown test image {name:?}; known: shapes, waves, blocks")))
    }
}

pub fn synthetic_image(kind: ImageKind, size: usize) -> Result<ImageBuffer> {
    if size < 4 {
        return Err(Error::invalid(format!("test images need size >= 4, got {size}")));
    }
    let n = size as f64;
    let mut values = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (fy, fx) = (y as f64 / n, x as f64 / n);
            let v = match kind {
                ImageKind::Shapes => {
                    let mut v = 0.3 + 0.2 * (6.0 * fx).sin() * (4.0 * fy).cos();
                    if (fx - 0.35).powi(2) + (fy - 0.4).powi(2) < 0.04 {
                        v += 0.4;
                    }
                    if fx > 0.6 && fy > 0.55 && fx < 0.9 && fy < 0.85 {
                        v = 0.15;
                    }
                    v
                }
                ImageKind::Waves => {
                    let tau = std::f64::consts::TAU;
                    0.5 + 0.25 * (tau * (1.5 * fx + 0.8 * fy)).sin() + 0.15 * (tau * (3.0 * fy - fx)).cos()
                }
                ImageKind::Blocks => {
                    let cell = ((4.0 * fx) as usize + 3 * (4.0 * fy) as usize) % 5;
                    0.15 + 0.15 * cell as f64 + 0.1 * fx
                }
            };
            values.push(v);
        }
    }
    ImageBuffer::new(size, size, 1, values)
}

pub fn test_images(size: usize) -> Result<Vec<(String, ImageBuffer)>> {
    ImageKind::ALL
        .into_iter()
        .map(|k| Ok((k.name().to_string(), synthetic_image(k, size)?)))
        .collect()
}

/// A preset plus its options, resolved against an image at run time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DipSetup {
    pub preset: String,
    pub options: PresetOptions,
}

impl DipSetup {
    /// `unet_small` with a near-silent readout, used by the suites.
    pub fn unet(channels: usize) -> Self {
        DipSetup {
            preset: "unet_small".into(),
            options: PresetOptions {
                dims: 2,
                channels,
                input_channels: channels,
                out_channels: Some(1),
                readout_gain: Some(0.01),
                padding: Padding::Reflect,
                ..Default::default()
            },
        }
    }

    /// One hidden conv layer on a smooth 16-channel input, used by the
    /// channel sweep. Its cost is linear in the hidden width.
    pub fn shallow(channels: usize) -> Self {
        DipSetup {
            preset: "conv_1".into(),
            options: PresetOptions {
                dims: 2,
                channels,
                input_channels: 16,
                input_kernel: InputKernel::GaussianFiltered {
                    sigma: 1.0,
                    filter_std: 2.0,
                },
                out_channels: Some(1),
                readout_gain: Some(0.01),
                padding: Padding::Reflect,
                ..Default::default()
            },
        }
    }

    pub fn with_channels(&self, channels: usize) -> Self {
        let mut s = self.clone();
        s.options.channels = channels;
        if self.options.input_channels == self.options.channels {
            s.options.input_channels = channels;
        }
        s
    }

    /// The spec for an image with `channels` colour channels.
    pub fn spec(&self, channels: usize) -> Result<NetworkSpec> {
        let mut opts = self.options.clone();
        opts.out_channels = Some(channels);
        preset(&self.preset, &opts)
    }
}

/// A corrupted observation of a clean image.
#[derive(Clone, Debug)]
pub struct Instance {
    pub clean: ImageBuffer,
    pub observed: ImageBuffer,
    pub mask: Option<Mask>,
}

/// Denoising adds `N(0, sigma²)` noise. Inpainting drops `drop_fraction` of
/// the pixels (zeroed in `observed`) and adds noise if `sigma > 0`.
pub fn corrupt(clean: &ImageBuffer, task: Task, sigma: f64, drop_fraction: f64, seed: u64) -> Result<Instance> {
    let root = Rng::new(seed, 2);
    let mut observed = add_noise(clean, sigma, &mut root.substream(0))?;
    let mask = match task {
        Task::Inpaint => {
            let m = random_mask(clean.height, clean.width, drop_fraction, &mut root.substream(1))?;
            let c = observed.channels;
            for (i, &o) in m.observed.iter().enumerate() {
                if !o {
                    observed.values[i * c..(i + 1) * c].fill(0.0);
                }
            }
            Some(m)
        }
        _ => None,
    };
    Ok(Instance {
        clean: clean.clone(),
        observed,
        mask,
    })
}

/// Runs `setup` on one instance.
pub fn run_instance(instance: &Instance, task: Task, setup: &DipSetup, config: &InferenceConfig) -> Result<RunOutput> {
    let spec = setup.spec(instance.clean.channels)?;
    let target = instance.observed.to_tensor();
    let clean = instance.clean.to_tensor();
    let mask = instance.mask.as_ref().map(|m| m.to_tensor(instance.clean.channels));
    let problem = Problem {
        task,
        target: &target,
        mask: mask.as_ref(),
        clean: Some(&clean),
    };
    Ok(run(&problem, &spec, config)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub task: Task,
    pub schemes: Vec<Scheme>,
    pub seeds: Vec<u64>,
    /// Corruption noise std on the [0, 1] scale.
    pub noise_sigma: f64,
    pub drop_fraction: f64,
    pub setup: DipSetup,
    /// Shared inference settings; `scheme` and `seed` are set per run.
    pub inference: InferenceConfig,
    /// SGD-family step size overriding `inference.lr`.
    pub sgd_lr: Option<f64>,
}

impl SuiteConfig {
    /// Desk-scale suite: `unet_small` with 8 channels, meant for 32×32
    /// images. Denoising uses Adam at 0.003 for 2000 iterations; noiseless
    /// inpainting uses Adam at 0.001 for 7500 iterations with a likelihood
    /// noise of 0.02 for SGLD.
    pub fn desk(task: Task) -> Self {
        let mut inference = InferenceConfig::defaults(task, Scheme::Sgd);
        let (noise_sigma, drop_fraction): (f64, f64) = match task {
            Task::Inpaint => (0.0, 0.5),
            _ => (0.1, 0.0),
        };
        match task {
            Task::Inpaint => {
                inference.lr = 0.001;
                inference.iterations = 7500;
                inference.burn_in = 5000;
                inference.sigma_n = 0.02;
            }
            _ => {
                inference.lr = 0.003;
                inference.iterations = 2000;
                inference.burn_in = 700;
                inference.sigma_n = noise_sigma;
            }
        }
        inference.eval_every = 20;
        SuiteConfig {
            task,
            schemes: Scheme::ALL.to_vec(),
            seeds: (0..5).collect(),
            noise_sigma,
            drop_fraction,
            setup: DipSetup::unet(8),
            inference,
            sgd_lr: None,
        }
    }

    fn config_for(&self, scheme: Scheme, seed: u64) -> InferenceConfig {
        let mut c = self.inference.clone();
        c.scheme = scheme;
        c.seed = seed;
        if scheme != Scheme::Sgld {
            if let Some(lr) = self.sgd_lr {
                c.lr = lr;
            }
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub image: String,
    pub scheme: Scheme,
    pub seed: u64,
    /// PSNR of the scheme's estimate against the clean image.
    pub psnr: f64,
    /// Oracle early-stopping PSNR over the evaluated iterates.
    pub best_psnr: Option<f64>,
    pub best_iter: Option<usize>,
    /// Mean MSE to the observation over iterations at or after burn-in.
    pub post_burn_in_mse: Option<f64>,
    pub final_mse: f64,
}

/// Mean and sample standard deviation of one (scheme, image) cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Cell {
    pub fn of(values: &[f64]) -> Cell {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n.max(1) as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Cell { mean, std, n }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub task: Task,
    pub images: Vec<String>,
    pub schemes: Vec<Scheme>,
    pub records: Vec<RunRecord>,
}

impl SuiteReport {
    pub fn cell(&self, scheme: Scheme, image: &str) -> Cell {
        let v: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.scheme == scheme && r.image == image)
            .map(|r| r.psnr)
            .collect();
        Cell::of(&v)
    }

    /// One row per scheme, one `mean ± std` column per image.
    pub fn table(&self) -> String {
        let mut out = format!("| scheme | {} |\n", self.images.join(" | "));
        out.push_str(&format!("|---|{}\n", "---|".repeat(self.images.len())));
        for &s in &self.schemes {
            let cells: Vec<String> = self
                .images
                .iter()
                .map(|i| {
                    let c = self.cell(s, i);
                    format!("{:.2} ± {:.2}", c.mean, c.std)
                })
                .collect();
            out.push_str(&format!("| {} | {} |\n", s.name(), cells.join(" | ")));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("image,scheme,seed,psnr,best_psnr,best_iter,post_burn_in_mse,final_mse\n");
        for r in &self.records {
            let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{:.6},{},{},{},{:.6e}\n",
                r.image,
                r.scheme.name(),
                r.seed,
                r.psnr,
                opt(r.best_psnr),
                r.best_iter.map(|i| i.to_string()).unwrap_or_default(),
                r.post_burn_in_mse.map(|x| format!("{x:.6e}")).unwrap_or_default(),
                r.final_mse
            ));
        }
        out
    }
}

/// Every (image, scheme, seed) combination. The corruption depends on the
/// seed only, so all schemes of one seed see the same observation.
pub fn run_suite(images: &[(String, ImageBuffer)], config: &SuiteConfig) -> Result<SuiteReport> {
    run_suite_with(images, config, 1, |_| {})
}

fn suite_run(clean: &ImageBuffer, name: &str, scheme: Scheme, seed: u64, config: &SuiteConfig) -> Result<RunRecord> {
    let instance = corrupt(clean, config.task, config.noise_sigma, config.drop_fraction, seed)?;
    let out = run_instance(&instance, config.task, &config.setup, &config.config_for(scheme, seed))?;
    let estimate = ImageBuffer::from_tensor(&out.output)?;
    Ok(RunRecord {
        image: name.to_string(),
        scheme,
        seed,
        psnr: psnr(&estimate, clean, None)?,
        best_psnr: out.best.as_ref().map(|b| b.psnr),
        best_iter: out.best.as_ref().map(|b| b.iter),
        post_burn_in_mse: out.post_burn_in_mse,
        final_mse: out.trace.rows.last().map_or(f64::NAN, |r| r.mse_noisy),
    })
}

/// [`run_suite`] on `jobs` worker threads, calling `progress` after each
/// run. Every run is sequential and seeded on its own, so the report does
/// not depend on `jobs`.
pub fn run_suite_with(
    images: &[(String, ImageBuffer)],
    config: &SuiteConfig,
    jobs: usize,
    progress: impl Fn(&RunRecord) + Sync,
) -> Result<SuiteReport> {
    if config.schemes.is_empty() || config.seeds.is_empty() || images.is_empty() {
        return Err(Error::invalid("a suite needs at least one image, scheme and seed"));
    }
    let mut work = Vec::new();
    for (i, _) in images.iter().enumerate() {
        for &seed in &config.seeds {
            for &scheme in &config.schemes {
                work.push((i, seed, scheme));
            }
        }
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<RunRecord>>>> = work.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, work.len()) {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(i, seed, scheme)) = work.get(k) else { break };
                let (name, clean) = &images[i];
                let res = suite_run(clean, name, scheme, seed, config);
                if let Ok(r) = &res {
                    progress(r);
                }
                let failed = res.is_err();
                *slots[k].lock().unwrap() = Some(res);
                if failed {
                    next.store(work.len(), Ordering::Relaxed);
                }
            });
        }
    });
    let mut records = Vec::with_capacity(work.len());
    for slot in slots {
        match slot.into_inner().unwrap() {
            Some(r) => records.push(r?),
            None => continue,
        }
    }
    Ok(SuiteReport {
        task: config.task,
        images: images.iter().map(|(n, _)| n.clone()).collect(),
        schemes: config.schemes.clone(),
        records,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub channels: Vec<usize>,
    pub seeds: Vec<u64>,
    pub drop_fraction: f64,
    /// Seed of the mask; fixed so every run sees one instance.
    pub instance_seed: u64,
    pub setup: DipSetup,
    pub inference: InferenceConfig,
    /// Observation noise of the GP baseline.
    pub gp_sigma_n: f64,
}

impl SweepConfig {
    pub fn desk() -> Self {
        let mut inference = InferenceConfig::defaults(Task::Inpaint, Scheme::Sgd);
        inference.optimizer = Optimizer::Sgd;
        inference.lr = 0.001;
        inference.iterations = 2000;
        inference.burn_in = 1000;
        inference.eval_every = 100;
        SweepConfig {
            channels: vec![16, 64, 256],
            seeds: (0..5).collect(),
            drop_fraction: 0.5,
            instance_seed: 0,
            setup: DipSetup::shallow(16),
            inference,
            gp_sigma_n: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// `dip` or `gp`.
    pub method: String,
    pub channels: Option<usize>,
    pub psnr: Vec<f64>,
    pub median: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn gp(&self) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.method == "gp")
    }

    pub fn dip(&self) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(|r| r.method == "dip")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,channels,median_psnr,psnr_per_seed\n");
        for r in &self.rows {
            let per: Vec<String> = r.psnr.iter().map(|p| format!("{p:.4}")).collect();
            out.push_str(&format!(
                "{},{},{:.4},{}\n",
                r.method,
                r.channels.map(|c| c.to_string()).unwrap_or_default(),
                r.median,
                per.join(";")
            ));
        }
        out
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// GP posterior mean under the kernel derived from `spec`.
pub fn gp_inpaint(spec: &NetworkSpec, instance: &Instance, sigma_n: f64) -> Result<(ImageBuffer, ImageBuffer)> {
    let size = instance.clean.height.max(instance.clean.width);
    let mut spec = spec.clone();
    spec.half_width = spec.half_width.max(size);
    let kernel = derive_kernel(&spec)?.kernel;
    let full;
    let mask = match &instance.mask {
        Some(m) => m,
        None => {
            full = Mask::full(instance.clean.height, instance.clean.width);
            &full
        }
    };
    let noise = if sigma_n > 0.0 {
        NoiseModel::new(sigma_n)?
    } else {
        NoiseModel::noiseless()
    };
    let (mean, var, _) = posterior_image(&kernel, &instance.observed, mask, noise)?;
    Ok((mean, var))
}

/// DIP at each channel count and seed, plus the GP with the derived kernel,
/// on one inpainting instance.
pub fn sweep_channels(clean: &ImageBuffer, config: &SweepConfig) -> Result<SweepReport> {
    sweep_channels_with(clean, config, |_, _, _| {})
}

/// [`sweep_channels`] with a callback `(channels, seed, psnr)` per DIP run.
pub fn sweep_channels_with(
    clean: &ImageBuffer,
    config: &SweepConfig,
    mut progress: impl FnMut(usize, u64, f64),
) -> Result<SweepReport> {
    if config.channels.is_empty() || config.seeds.is_empty() {
        return Err(Error::invalid("sweep needs channel counts and seeds"));
    }
    let instance = corrupt(clean, Task::Inpaint, 0.0, config.drop_fraction, config.instance_seed)?;
    let mut rows = Vec::new();
    let spec = config.setup.spec(clean.channels)?;
    let (gp_mean, _) = gp_inpaint(&spec, &instance, config.gp_sigma_n)?;
    let gp = psnr(&gp_mean, clean, None)?;
    rows.push(SweepRow {
        method: "gp".into(),
        channels: None,
        psnr: vec![gp],
        median: gp,
    });
    for &c in &config.channels {
        let setup = config.setup.with_channels(c);
        let mut values = Vec::new();
        for &seed in &config.seeds {
            let mut inf = config.inference.clone();
            inf.seed = seed;
            let out = run_instance(&instance, Task::Inpaint, &setup, &inf)?;
            let p = psnr(&ImageBuffer::from_tensor(&out.output)?, clean, None)?;
            progress(c, seed, p);
            values.push(p);
        }
        rows.push(SweepRow {
            method: "dip".into(),
            channels: Some(c),
            median: median(&values),
            psnr: values,
        });
    }
    Ok(SweepReport { rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Toy1dConfig {
    pub depths: Vec<usize>,
    pub channels: usize,
    pub input_kernel: InputKernel,
    /// Lags reported in the covariance curves.
    pub half_width: usize,
    pub length: usize,
    pub prior_samples: usize,
    pub drop_fraction: f64,
    pub sigma_n: f64,
    /// Depth of the `conv` kernel used for the posterior.
    pub posterior_depth: usize,
    pub seed: u64,
}

impl Default for Toy1dConfig {
    fn default() -> Self {
        Toy1dConfig {
            depths: vec![1, 2, 4],
            channels: 64,
            input_kernel: InputKernel::GaussianFiltered {
                sigma: 1.0,
                filter_std: 2.0,
            },
            half_width: 32,
            length: 256,
            prior_samples: 3,
            drop_fraction: 0.9,
            sigma_n: 1e-3,
            posterior_depth: 2,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceCurve {
    pub preset: String,
    pub depth: usize,
    /// `ρ(r)` for `r = 0..=half_width`.
    pub rho: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSamples {
    pub preset: String,
    pub depth: usize,
    pub samples: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Toy1dReport {
    pub curves: Vec<CovarianceCurve>,
    pub prior: Vec<PriorSamples>,
    /// The clean signal with the observation flags of the dropped version.
    pub signal: Signal,
    pub posterior_mean: Vec<f64>,
    pub posterior_variance: Vec<f64>,
}

impl Toy1dReport {
    pub fn curve_csv(curve: &CovarianceCurve) -> String {
        let mut out = String::from("lag,rho\n");
        for (r, v) in curve.rho.iter().enumerate() {
            out.push_str(&format!("{r},{v:.16e}\n"));
        }
        out
    }

    pub fn prior_csv(prior: &PriorSamples) -> String {
        let n = prior.samples.first().map_or(0, Vec::len);
        let head: Vec<String> = (0..prior.samples.len()).map(|i| format!("sample{i}")).collect();
        let mut out = format!("position,{}\n", head.join(","));
        for t in 0..n {
            let row: Vec<String> = prior.samples.iter().map(|s| format!("{:.16e}", s[t])).collect();
            out.push_str(&format!("{t},{}\n", row.join(",")));
        }
        out
    }

    pub fn posterior_csv(&self) -> String {
        let mut out = String::from("position,value,observed,mean,variance\n");
        for i in 0..self.signal.len() {
            out.push_str(&format!(
                "{},{:.16e},{},{:.16e},{:.16e}\n",
                self.signal.positions[i],
                self.signal.values[i],
                u8::from(self.signal.observed[i]),
                self.posterior_mean[i],
                self.posterior_variance[i]
            ));
        }
        out
    }
}

fn toy_spec(name: &str, depth: usize, config: &Toy1dConfig) -> Result<NetworkSpec> {
    let opts = PresetOptions {
        dims: 1,
        channels: config.channels,
        input_channels: config.channels,
        input_kernel: config.input_kernel,
        half_width: config.half_width,
        ..Default::default()
    };
    preset(&format!("{name}_{depth}"), &opts)
}

/// A smooth deterministic test signal.
pub fn toy_signal(length: usize) -> Vec<f64> {
    let n = length as f64;
    (0..length)
        .map(|t| {
            let x = t as f64 / n;
            (std::f64::consts::TAU * 2.0 * x).sin() + 0.5 * (std::f64::consts::TAU * 5.0 * x + 0.3).sin()
        })
        .collect()
}

/// Covariance curves of `conv` and `ae` at each depth, random-network prior
/// samples, and the GP posterior of a signal with most samples dropped.
pub fn toy1d(config: &Toy1dConfig) -> Result<Toy1dReport> {
    if config.depths.is_empty() {
        return Err(Error::invalid("toy1d needs at least one depth"));
    }
    let root = Rng::new(config.seed, 3);
    let mut curves = Vec::new();
    let mut prior = Vec::new();
    for (pi, name) in ["conv", "ae"].into_iter().enumerate() {
        for (di, &depth) in config.depths.iter().enumerate() {
            let spec = toy_spec(name, depth, config)?;
            let k = derive_kernel(&spec)?.kernel;
            let rho = (0..=config.half_width as i64).map(|r| k.rho([r, 0]).unwrap_or(0.0)).collect();
            curves.push(CovarianceCurve {
                preset: name.into(),
                depth,
                rho,
            });
            let mut rng = root.substream((pi * 1000 + di) as u64);
            let samples = (0..config.prior_samples)
                .map(|_| sample_output(&spec, &mut rng, config.length).map(|t| t.into_data()))
                .collect::<Result<Vec<_>>>()?;
            prior.push(PriorSamples {
                preset: name.into(),
                depth,
                samples,
            });
        }
    }

    let values = toy_signal(config.length);
    let mask = random_mask(1, config.length, config.drop_fraction, &mut root.substream(1 << 20))?;
    let signal = Signal {
        positions: (0..config.length as i64).collect(),
        values: values.clone(),
        observed: mask.observed.clone(),
    };
    let spec = toy_spec("conv", config.posterior_depth, config)?;
    let mut spec_wide = spec.clone();
    spec_wide.half_width = config.length;
    let kernel = derive_kernel(&spec_wide)?.kernel;
    let (pos, obs) = signal.observed_points();
    let points: Vec<Point> = pos.iter().map(|&p| [p, 0]).collect();
    let queries: Vec<Point> = signal.positions.iter().map(|&p| [p, 0]).collect();
    let noise = if config.sigma_n > 0.0 {
        NoiseModel::new(config.sigma_n)?
    } else {
        NoiseModel::noiseless()
    };
    let post = posterior(&kernel, &points, &obs, noise, &queries)?;
    Ok(Toy1dReport {
        curves,
        prior,
        signal,
        posterior_mean: post.mean,
        posterior_variance: post.variance,
    })
}
