//! SGD-family and SGLD estimation of deep-image-prior reconstructions.
//!
//! Five schemes share one loop: plain SGD, SGD with an exponential moving
//! average of the outputs, SGD with a perturbed input, both combined, and
//! SGLD with posterior averaging after burn-in. The data term is always
//! `½‖m ⊙ (f(x, θ) − ŷ)‖²` with `m` the observation mask.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{backward, forward, init, NetworkInput, NetworkSpec, ParamSet};
use crate::rng::Rng;
use crate::signal::psnr_from_mse;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Sgd,
    SgdAvg,
    SgdInput,
    SgdInputAvg,
    Sgld,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::Sgd,
        Scheme::SgdAvg,
        Scheme::SgdInput,
        Scheme::SgdInputAvg,
        Scheme::Sgld,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Sgd => "sgd",
            Scheme::SgdAvg => "sgd_avg",
            Scheme::SgdInput => "sgd_input",
            Scheme::SgdInputAvg => "sgd_input_avg",
            Scheme::Sgld => "sgld",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| Error::invalid(format!("unknown scheme {name:?}")))
    }

    fn averages(self) -> bool {
        matches!(self, Scheme::SgdAvg | Scheme::SgdInputAvg)
    }

    fn perturbs_input(self) -> bool {
        matches!(self, Scheme::SgdInput | Scheme::SgdInputAvg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Denoise,
    Inpaint,
    Fit1d,
}

/// Step size over iterations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StepSchedule {
    Constant,
    /// `ε_t = ε (1 + t / scale)^(−gamma)`.
    Polynomial { scale: f64, gamma: f64 },
}

impl StepSchedule {
    pub fn at(self, lr: f64, t: usize) -> f64 {
        match self {
            StepSchedule::Constant => lr,
            StepSchedule::Polynomial { scale, gamma } => lr * (1.0 + t as f64 / scale).powf(-gamma),
        }
    }
}

/// Update rule of the SGD-family schemes. SGLD always uses [`sgld_step`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Optimizer {
    /// [`sgd_step`].
    Sgd,
    /// [`Adam::step`]: moment-normalised steps, so `lr` is scale-free.
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceConfig {
    pub scheme: Scheme,
    pub optimizer: Optimizer,
    /// SGD-family step size, or the SGLD step `ε`.
    pub lr: f64,
    /// SGLD step `ε`; `None` uses [`default_sgld_lr`].
    pub sgld_lr: Option<f64>,
    pub iterations: usize,
    /// SGLD samples from iterations `burn_in..iterations` are averaged.
    pub burn_in: usize,
    /// Input perturbation std for the `*_input*` schemes.
    pub sigma_p: f64,
    /// `λ`; `None` selects the scheme default.
    pub weight_decay: Option<f64>,
    pub ema_decay: f64,
    /// SGLD only: inject `N(0, ε)` per step.
    pub noise_injection: bool,
    /// Likelihood noise std `σ_n` used by SGLD.
    pub sigma_n: f64,
    pub schedule: StepSchedule,
    pub optimize_input: bool,
    pub seed: u64,
    pub eval_every: usize,
}

impl InferenceConfig {
    /// Desk-scale defaults for a task and scheme.
    pub fn defaults(task: Task, scheme: Scheme) -> Self {
        let (lr, iterations, burn_in) = match task {
            Task::Denoise => (0.01, 5000, 1750),
            Task::Inpaint => (0.001, 7500, 5000),
            Task::Fit1d => (0.01, 5000, 1750),
        };
        InferenceConfig {
            scheme,
            optimizer: Optimizer::adam(),
            lr,
            sgld_lr: None,
            iterations,
            burn_in,
            sigma_p: 1.0 / 30.0,
            weight_decay: None,
            ema_decay: 0.99,
            noise_injection: true,
            sigma_n: 0.1,
            schedule: StepSchedule::Constant,
            optimize_input: false,
            seed: 0,
            eval_every: 50,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.iterations > 0 && self.burn_in >= self.iterations {
            return Err(Error::invalid(format!(
                "burn_in {} must be below iterations {}",
                self.burn_in, self.iterations
            )));
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return Err(Error::invalid(format!("ema_decay must lie in (0, 1), got {}", self.ema_decay)));
        }
        if let Some(e) = self.sgld_lr {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::invalid(format!("sgld_lr must be > 0, got {e}")));
            }
        }
        if let Some(l) = self.weight_decay {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::invalid(format!("weight_decay must be >= 0, got {l}")));
            }
        }
        if !(self.sigma_p >= 0.0 && self.sigma_p.is_finite()) {
            return Err(Error::invalid(format!("sigma_p must be >= 0, got {}", self.sigma_p)));
        }
        if !(self.sigma_n > 0.0 && self.sigma_n.is_finite()) {
            return Err(Error::invalid(format!("sigma_n must be > 0, got {}", self.sigma_n)));
        }
        if let StepSchedule::Polynomial { scale, gamma } = self.schedule {
            if !(scale > 0.0 && gamma >= 0.0) {
                return Err(Error::invalid("polynomial schedule needs scale > 0 and gamma >= 0"));
            }
        }
        if self.eval_every == 0 {
            return Err(Error::invalid("eval_every must be positive"));
        }
        Ok(())
    }

    /// `λ`, defaulting to `5e-8 · 1024² / pixels` for SGLD and 0 otherwise.
    pub fn resolved_weight_decay(&self, pixels: usize) -> f64 {
        self.weight_decay.unwrap_or(match self.scheme {
            Scheme::Sgld => default_weight_decay(pixels),
            _ => 0.0,
        })
    }

    /// SGLD step `ε`, defaulting to [`default_sgld_lr`].
    pub fn resolved_sgld_lr(&self, pixels: usize) -> f64 {
        self.sgld_lr.unwrap_or_else(|| default_sgld_lr(pixels, self.sigma_n))
    }
}

/// `ε = 0.32 σ_n² / pixels`, a drift step `ε / (2σ_n²) = 0.16 / pixels` on
/// the summed loss. At 64×64 and `σ_n = 0.1` this is `ε = 8e-7`.
pub fn default_sgld_lr(pixels: usize, sigma_n: f64) -> f64 {
    0.32 * sigma_n * sigma_n / pixels as f64
}

pub fn default_weight_decay(pixels: usize) -> f64 {
    5e-8 * (1024.0 * 1024.0) / pixels as f64
}

fn check_finite(grads: &ParamSet) -> Result<()> {
    if grads.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite("gradient".into()))
    }
}

/// `w ← w − lr (g + λ w)`.
pub fn sgd_step(params: &mut ParamSet, grads: &ParamSet, lr: f64, weight_decay: f64) -> Result<()> {
    params.check_same_layout(grads)?;
    check_finite(grads)?;
    for (w, g) in params.tensors_mut().zip(grads.tensors()) {
        for (w, g) in w.data_mut().iter_mut().zip(g.data()) {
            *w -= lr * (g + weight_decay * *w);
        }
    }
    Ok(())
}

/// `w ← w − (ε/2)(g / σ_n² + λ w) + N(0, ε)`, with `g` the gradient of
/// `½‖ŷ − f‖²`. The drift is exactly [`sgd_step`] with step `ε / 2σ_n²`
/// and decay `λ σ_n²`; `rng = None` disables the injected noise.
pub fn sgld_step(
    params: &mut ParamSet,
    grads: &ParamSet,
    eps: f64,
    weight_decay: f64,
    sigma_n: f64,
    rng: Option<&mut Rng>,
) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!("SGLD step must be > 0, got {eps}")));
    }
    let s2 = sigma_n * sigma_n;
    sgd_step(params, grads, eps / (2.0 * s2), weight_decay * s2)?;
    if let Some(rng) = rng {
        let std = eps.sqrt();
        for w in params.tensors_mut() {
            for v in w.data_mut() {
                *v += std * rng.normal();
            }
        }
    }
    if params.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite("parameters after SGLD step".into()))
    }
}

/// Adam moment state for one parameter set.
#[derive(Clone, Debug)]
pub struct Adam {
    m: ParamSet,
    v: ParamSet,
    t: i32,
}

impl Adam {
    pub fn new(like: &ParamSet) -> Self {
        Adam {
            m: like.zeros_like(),
            v: like.zeros_like(),
            t: 0,
        }
    }

    /// One bias-corrected Adam step on `g + λ w`.
    pub fn step(
        &mut self,
        params: &mut ParamSet,
        grads: &ParamSet,
        lr: f64,
        weight_decay: f64,
        (beta1, beta2, eps): (f64, f64, f64),
    ) -> Result<()> {
        params.check_same_layout(grads)?;
        check_finite(grads)?;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        let tensors = params
            .tensors_mut()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut().zip(self.v.tensors_mut()));
        for ((w, g), (m, v)) in tensors {
            let it = w
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut()));
            for ((w, g), (m, v)) in it {
                let g = g + weight_decay * *w;
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// `decay · acc + (1 − decay) · new`; without an accumulator, `new`.
pub fn ema_update(acc: Option<&Tensor>, new: &Tensor, decay: f64) -> Result<Tensor> {
    if !(decay > 0.0 && decay < 1.0) {
        return Err(Error::invalid(format!("decay must lie in (0, 1), got {decay}")));
    }
    match acc {
        None => Ok(new.clone()),
        Some(acc) => {
            acc.check_same_shape(new)?;
            let data = acc
                .data()
                .iter()
                .zip(new.data())
                .map(|(a, x)| decay * a + (1.0 - decay) * x)
                .collect();
            Tensor::new(acc.shape().to_vec(), data)
        }
    }
}

pub fn perturb_input(input: &NetworkInput, rng: &mut Rng) -> Result<Tensor> {
    input.perturbed(rng)
}

/// Streaming per-element mean and sum of squared deviations (Welford).
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorAccumulator {
    count: usize,
    mean: Option<Tensor>,
    m2: Vec<f64>,
}

impl Default for PosteriorAccumulator {
    fn default() -> Self {
        PosteriorAccumulator::new()
    }
}

impl PosteriorAccumulator {
    pub fn new() -> Self {
        PosteriorAccumulator {
            count: 0,
            mean: None,
            m2: Vec::new(),
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> Option<&Tensor> {
        self.mean.as_ref()
    }

    pub fn push(&mut self, sample: &Tensor) -> Result<()> {
        match &mut self.mean {
            None => {
                self.mean = Some(sample.clone());
                self.m2 = vec![0.0; sample.len()];
            }
            Some(mean) => {
                mean.check_same_shape(sample)?;
                let n = (self.count + 1) as f64;
                for ((m, s), x) in mean.data_mut().iter_mut().zip(self.m2.iter_mut()).zip(sample.data()) {
                    let delta = x - *m;
                    *m += delta / n;
                    *s += delta * (x - *m);
                }
            }
        }
        self.count += 1;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorStats {
    pub mean: Tensor,
    /// Unbiased (`count − 1`) per-element variance.
    pub variance: Tensor,
    pub count: usize,
}

pub fn posterior_stats(acc: &PosteriorAccumulator) -> Result<PosteriorStats> {
    if acc.count < 2 {
        return Err(Error::invalid(format!(
            "posterior statistics need at least 2 samples, have {}",
            acc.count
        )));
    }
    let mean = acc.mean.clone().expect("count >= 2");
    let d = (acc.count - 1) as f64;
    let variance = Tensor::new(
        mean.shape().to_vec(),
        acc.m2.iter().map(|s| (s / d).max(0.0)).collect(),
    )?;
    Ok(PosteriorStats {
        mean,
        variance,
        count: acc.count,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    /// MSE of the current iterate against the target on observed pixels.
    pub mse_noisy: f64,
    /// PSNR of the current iterate against the clean reference.
    pub psnr_clean: Option<f64>,
    /// PSNR of the scheme's running estimate (EMA or posterior mean).
    pub psnr_estimate: Option<f64>,
    pub param_norm: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
    /// Index into `rows` of the best `psnr_clean`.
    pub best_row: Option<usize>,
}

impl RunTrace {
    fn push(&mut self, row: TraceRow) {
        let better = match (self.best_row, row.psnr_clean) {
            (_, None) => false,
            (None, Some(_)) => true,
            (Some(b), Some(p)) => p > self.rows[b].psnr_clean.unwrap_or(f64::NEG_INFINITY),
        };
        if better {
            self.best_row = Some(self.rows.len());
        }
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,mse_noisy,psnr_clean,psnr_estimate,param_norm,best\n");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.10e}")).unwrap_or_default();
        for (i, r) in self.rows.iter().enumerate() {
            writeln!(
                out,
                "{},{:.10e},{},{},{:.10e},{}",
                r.iter,
                r.mse_noisy,
                opt(r.psnr_clean),
                opt(r.psnr_estimate),
                r.param_norm,
                u8::from(self.best_row == Some(i))
            )
            .expect("write to string");
        }
        out
    }
}

/// Mean squared difference, restricted to `mask > 0` when given.
pub fn tensor_mse(a: &Tensor, b: &Tensor, mask: Option<&Tensor>) -> Result<f64> {
    a.check_same_shape(b)?;
    let (mut sum, mut count) = (0.0, 0.0);
    match mask {
        None => {
            sum = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
            count = a.len() as f64;
        }
        Some(m) => {
            a.check_same_shape(m)?;
            for ((x, y), w) in a.data().iter().zip(b.data()).zip(m.data()) {
                if *w > 0.0 {
                    sum += (x - y) * (x - y);
                    count += 1.0;
                }
            }
        }
    }
    if count == 0.0 {
        return Err(Error::invalid("mask observes nothing"));
    }
    Ok(sum / count)
}

#[derive(Clone, Debug)]
pub struct BestIterate {
    pub iter: usize,
    pub psnr: f64,
    pub output: Tensor,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    /// The scheme's estimate: EMA, posterior mean, or last iterate.
    pub output: Tensor,
    /// Rendering of the final parameters on the unperturbed input.
    pub last_iterate: Tensor,
    pub trace: RunTrace,
    pub posterior: Option<PosteriorStats>,
    pub best: Option<BestIterate>,
    pub params: ParamSet,
    pub weight_decay: f64,
    /// Mean MSE to the target over every iteration at or after `burn_in`.
    pub post_burn_in_mse: Option<f64>,
}

/// A run that stopped early, with everything recorded so far.
#[derive(Debug)]
pub struct RunFailure {
    pub error: Error,
    pub iteration: usize,
    pub trace: RunTrace,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "run aborted at iteration {}: {}", self.iteration, self.error)
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<RunFailure> for Error {
    fn from(f: RunFailure) -> Self {
        f.error
    }
}

pub const DIVERGENCE_LOSS: f64 = 1e6;

/// Inputs of one reconstruction.
pub struct Problem<'a> {
    pub task: Task,
    pub target: &'a Tensor,
    /// 0/1 weights, shape of `target`; required for inpainting.
    pub mask: Option<&'a Tensor>,
    pub clean: Option<&'a Tensor>,
}

/// Train `spec` on one corrupted signal or image with the configured scheme.
pub fn run(problem: &Problem, spec: &NetworkSpec, config: &InferenceConfig) -> std::result::Result<RunOutput, RunFailure> {
    let fail = |error: Error, iteration: usize, trace: &RunTrace| RunFailure {
        error,
        iteration,
        trace: trace.clone(),
    };
    let mut trace = RunTrace::default();
    config.validate().map_err(|e| fail(e, 0, &trace))?;
    let target = problem.target;
    if problem.task == Task::Inpaint && problem.mask.is_none() {
        return Err(fail(Error::invalid("inpainting needs a mask"), 0, &trace));
    }
    let setup = || -> Result<(ParamSet, NetworkInput)> {
        if let Some(m) = problem.mask {
            target.check_same_shape(m)?;
        }
        if let Some(c) = problem.clean {
            target.check_same_shape(c)?;
        }
        let extent = target.spatial().to_vec();
        let out = spec.output_extent(&extent)?;
        if out != extent {
            return Err(Error::shape(format!(
                "network maps extent {extent:?} to {out:?}; it must preserve the target extent"
            )));
        }
        let (params, mut input) = init(spec, &extent, config.seed)?;
        input.frozen = !config.optimize_input;
        input.sigma_p = if config.scheme.perturbs_input() { config.sigma_p } else { 0.0 };
        Ok((params, input))
    };
    let (mut params, mut input) = setup().map_err(|e| fail(e, 0, &trace))?;
    let pixels = target.spatial_len();
    let weight_decay = config.resolved_weight_decay(pixels);
    let sgld_lr = config.resolved_sgld_lr(pixels);
    let noise_root = Rng::new(config.seed, 1);
    let mut perturb_rng = noise_root.substream(0);
    let mut sgld_rng = noise_root.substream(1);

    let mut adam = Adam::new(&params);
    let mut ema: Option<Tensor> = None;
    let mut acc = PosteriorAccumulator::new();
    let mut best: Option<BestIterate> = None;
    let observed = problem.mask.map_or(target.len() as f64, |m| m.data().iter().sum());
    let (mut mse_sum, mut mse_count) = (0.0, 0usize);
    let psnr_of = |f: &Tensor| -> Result<Option<f64>> {
        problem.clean.map(|c| tensor_mse(f, c, None).map(psnr_from_mse)).transpose()
    };

    for t in 0..config.iterations {
        let mut step = || -> Result<()> {
            let x = if config.scheme.perturbs_input() {
                perturb_input(&input, &mut perturb_rng)?
            } else {
                input.x.clone()
            };
            let cache = forward(spec, &params, &x)?;
            let f = cache.output();
            let mut resid = f.clone();
            resid.axpy(-1.0, target)?;
            if let Some(m) = problem.mask {
                for (r, w) in resid.data_mut().iter_mut().zip(m.data()) {
                    *r *= w;
                }
            }
            let loss = 0.5 * resid.norm_sq();
            if !loss.is_finite() || loss > DIVERGENCE_LOSS {
                return Err(Error::Numerical(format!("diverged: loss {loss:e}")));
            }
            if t >= config.burn_in {
                mse_sum += 2.0 * loss / observed;
                mse_count += 1;
            }

            if config.scheme.averages() {
                ema = Some(ema_update(ema.as_ref(), f, config.ema_decay)?);
            }
            if config.scheme == Scheme::Sgld && t >= config.burn_in {
                acc.push(f)?;
            }
            if t % config.eval_every == 0 || t + 1 == config.iterations {
                let psnr_clean = psnr_of(f)?;
                let estimate = match config.scheme {
                    Scheme::Sgld => acc.mean(),
                    _ if config.scheme.averages() => ema.as_ref(),
                    _ => None,
                };
                let psnr_estimate = match estimate {
                    Some(e) => psnr_of(e)?,
                    None => psnr_clean,
                };
                if let Some(p) = psnr_clean {
                    if best.as_ref().is_none_or(|b| p > b.psnr) {
                        best = Some(BestIterate {
                            iter: t,
                            psnr: p,
                            output: f.clone(),
                        });
                    }
                }
                trace.push(TraceRow {
                    iter: t,
                    mse_noisy: tensor_mse(f, target, problem.mask)?,
                    psnr_clean,
                    psnr_estimate,
                    param_norm: params.norm_sq().sqrt(),
                });
            }

            let (grads, grad_x) = backward(spec, &params, &cache, &resid, !input.frozen)?;
            match config.scheme {
                Scheme::Sgld => {
                    let lr = config.schedule.at(sgld_lr, t);
                    let rng = config.noise_injection.then_some(&mut sgld_rng);
                    sgld_step(&mut params, &grads, lr, weight_decay, config.sigma_n, rng)?;
                    if !input.frozen {
                        let s2 = config.sigma_n * config.sigma_n;
                        input.x.axpy(-lr / (2.0 * s2), &grad_x)?;
                    }
                }
                _ => {
                    let lr = config.schedule.at(config.lr, t);
                    match config.optimizer {
                        Optimizer::Sgd => sgd_step(&mut params, &grads, lr, weight_decay)?,
                        Optimizer::Adam { beta1, beta2, eps } => {
                            adam.step(&mut params, &grads, lr, weight_decay, (beta1, beta2, eps))?
                        }
                    }
                    if !input.frozen {
                        input.x.axpy(-lr, &grad_x)?;
                    }
                }
            }
            Ok(())
        };
        let res = step();
        res.map_err(|e| fail(e, t, &trace))?;
    }

    let finish = || -> Result<RunOutput> {
        let last_iterate = forward(spec, &params, &input.x)?.into_output();
        let posterior = if config.scheme == Scheme::Sgld && acc.count() >= 2 {
            Some(posterior_stats(&acc)?)
        } else {
            None
        };
        let output = match (&posterior, &ema) {
            (Some(p), _) => p.mean.clone(),
            (None, Some(e)) => e.clone(),
            _ => last_iterate.clone(),
        };
        Ok(RunOutput {
            output,
            last_iterate,
            trace: trace.clone(),
            posterior,
            best: best.clone(),
            params: params.clone(),
            weight_decay,
            post_burn_in_mse: (mse_count > 0).then(|| mse_sum / mse_count as f64),
        })
    };
    finish().map_err(|e| fail(e, config.iterations, &trace))
}

/// Conjugate Gaussian toy: `ŷ = w + ε`, `ε ~ N(0, σ_n²)`, prior `w ~ N(0, 1/λ)`.
/// Runs the scalar SGLD chain and returns its samples after burn-in.
pub fn sgld_scalar_chain(
    y: f64,
    sigma_n: f64,
    weight_decay: f64,
    eps: f64,
    steps: usize,
    burn_in: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let mut w = ParamSet::from_slots(vec![Some(Tensor::from_signal(&[0.0]))], 0);
    let mut samples = Vec::with_capacity(steps.saturating_sub(burn_in));
    for t in 0..steps {
        let wv = w.tensors().next().expect("one slot").data()[0];
        let g = ParamSet::from_slots(vec![Some(Tensor::from_signal(&[wv - y]))], 0);
        sgld_step(&mut w, &g, eps, weight_decay, sigma_n, Some(rng))?;
        if t >= burn_in {
            samples.push(w.tensors().next().expect("one slot").data()[0]);
        }
    }
    Ok(samples)
}

/// Posterior variance of the conjugate toy, `1 / (1/σ_n² + λ)`.
pub fn conjugate_posterior_variance(sigma_n: f64, weight_decay: f64) -> f64 {
    1.0 / (1.0 / (sigma_n * sigma_n) + weight_decay)
}

/// Stationary variance of the discretised chain above, which differs from
/// the continuous-time posterior by the step-size bias.
pub fn discretised_chain_variance(sigma_n: f64, weight_decay: f64, eps: f64) -> f64 {
    let a = 1.0 / (sigma_n * sigma_n) + weight_decay;
    let rho = 1.0 - 0.5 * eps * a;
    eps / (1.0 - rho * rho)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> ParamSet {
        ParamSet::from_slots(vec![Some(Tensor::from_signal(&[v])), None], 0)
    }

    fn value(p: &ParamSet) -> f64 {
        p.tensors().next().unwrap().data()[0]
    }

    #[test]
    fn sgd_examples() {
        let mut w = scalar(1.0);
        sgd_step(&mut w, &scalar(0.0), 0.1, 0.0).unwrap();
        assert_eq!(value(&w), 1.0);
        sgd_step(&mut w, &scalar(0.0), 0.1, 0.1).unwrap();
        assert!((value(&w) - 0.99).abs() < 1e-15);
        assert!(sgd_step(&mut w, &scalar(f64::NAN), 0.1, 0.0).is_err());
    }

    #[test]
    fn sgd_quadratic_converges() {
        // loss ½ a (w − 3)², contraction factor 1 − lr·a
        let a = 2.0;
        let mut w = scalar(-5.0);
        for _ in 0..1000 {
            let g = scalar(a * (value(&w) - 3.0));
            sgd_step(&mut w, &g, 0.1, 0.0).unwrap();
        }
        assert!((value(&w) - 3.0).abs() < 1e-6);
    }

    #[test]
    fn sgld_noise_only_variance() {
        let mut rng = Rng::new(1, 0);
        let eps = 0.04;
        let mut w = scalar(0.0);
        let mut deltas = Vec::new();
        for _ in 0..100_000 {
            let before = value(&w);
            sgld_step(&mut w, &scalar(0.0), eps, 0.0, 1.0, Some(&mut rng)).unwrap();
            deltas.push(value(&w) - before);
        }
        let var = deltas.iter().map(|d| d * d).sum::<f64>() / deltas.len() as f64;
        assert!((var / eps - 1.0).abs() < 0.03);
    }

    #[test]
    fn sgld_without_noise_is_sgd() {
        let (eps, s) = (0.01, 0.3);
        let mut a = scalar(2.0);
        let mut b = scalar(2.0);
        for i in 0..50 {
            let g = scalar((i as f64).sin() + value(&a));
            sgld_step(&mut a, &g, eps, 0.0, s, None).unwrap();
            sgd_step(&mut b, &g, eps / (2.0 * s * s), 0.0).unwrap();
            assert_eq!(value(&a).to_bits(), value(&b).to_bits());
        }
    }

    #[test]
    fn ema_examples() {
        let m = Tensor::from_signal(&[1.0]);
        let x = Tensor::from_signal(&[2.0]);
        let first = ema_update(None, &x, 0.99).unwrap();
        assert_eq!(first, x);
        let e = ema_update(Some(&m), &x, 0.99).unwrap();
        assert!((e.data()[0] - 1.01).abs() < 1e-15);
        let mut acc = ema_update(None, &x, 0.9).unwrap();
        for _ in 0..100 {
            acc = ema_update(Some(&acc), &x, 0.9).unwrap();
        }
        assert_eq!(acc, x);
        assert!(ema_update(Some(&m), &Tensor::from_signal(&[1.0, 2.0]), 0.9).is_err());
        assert!(ema_update(None, &x, 1.0).is_err());
    }

    #[test]
    fn ema_alternating_stream() {
        // steady state oscillates between 1/(1+d) and d/(1+d)
        let d = 0.9;
        let mut acc: Option<Tensor> = None;
        for i in 0..2000 {
            let x = Tensor::from_signal(&[(i % 2) as f64]);
            acc = Some(ema_update(acc.as_ref(), &x, d).unwrap());
        }
        let v = acc.unwrap().data()[0];
        assert!((v - 0.5).abs() <= (1.0 - d) / 2.0 + 1e-12);
        assert!((v - 1.0 / (1.0 + d)).abs() < 1e-12);
    }

    #[test]
    fn accumulator() {
        let mut acc = PosteriorAccumulator::new();
        assert!(posterior_stats(&acc).is_err());
        acc.push(&Tensor::from_signal(&[0.0, 5.0])).unwrap();
        assert!(posterior_stats(&acc).is_err());
        acc.push(&Tensor::from_signal(&[2.0, 5.0])).unwrap();
        let s = posterior_stats(&acc).unwrap();
        assert_eq!(s.mean.data(), &[1.0, 5.0]);
        assert_eq!(s.variance.data(), &[2.0, 0.0]);
    }

    #[test]
    fn trace_csv_marks_best() {
        let mut t = RunTrace::default();
        for (i, p) in [10.0, 12.0, 11.0].iter().enumerate() {
            t.push(TraceRow {
                iter: i,
                mse_noisy: 0.1,
                psnr_clean: Some(*p),
                psnr_estimate: None,
                param_norm: 1.0,
            });
        }
        assert_eq!(t.best_row, Some(1));
        let csv = t.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "iter,mse_noisy,psnr_clean,psnr_estimate,param_norm,best");
        assert!(lines[2].ends_with(",1"));
        assert!(lines[1].ends_with(",0"));
    }

    #[test]
    fn config_validation() {
        let mut c = InferenceConfig::defaults(Task::Denoise, Scheme::Sgld);
        assert!(c.validate().is_ok());
        c.burn_in = c.iterations;
        assert!(c.validate().is_err());
        let mut c = InferenceConfig::defaults(Task::Inpaint, Scheme::Sgd);
        assert_eq!(c.lr, 0.001);
        c.ema_decay = 1.0;
        assert!(c.validate().is_err());
        assert!(Scheme::parse("sgd_input_avg").is_ok());
        assert!(Scheme::parse("adam").is_err());
        assert!((default_weight_decay(1024 * 1024) - 5e-8).abs() < 1e-20);
    }
}
