//! Exact Gaussian-process prior sampling and regression.
//!
//! Everything is dense and Cholesky-based. When the Gram matrix is not
//! numerically positive definite a diagonal jitter is added, climbing
//! `1e-8 → 1e-6 → 1e-4` times the prior variance; the jitter used is
//! reported alongside each result.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{Point, StationaryKernel};
use crate::linalg::{Cholesky, Matrix};
use crate::rng::Rng;
use crate::signal::{ImageBuffer, Mask};

/// Largest system solved densely.
pub const MAX_POINTS: usize = 20_000;

const JITTER_LADDER: [f64; 3] = [1e-8, 1e-6, 1e-4];

/// A stationary covariance that can be evaluated at integer lags.
pub trait Covariance {
    fn cov(&self, lag: Point) -> Result<f64>;
    fn prior_variance(&self) -> f64;
    fn describe(&self) -> String;
}

impl Covariance for StationaryKernel {
    fn cov(&self, lag: Point) -> Result<f64> {
        self.get(lag).ok_or_else(|| {
            Error::invalid(format!(
                "lag {lag:?} is outside the kernel support (half width {})",
                self.half_width()
            ))
        })
    }

    fn prior_variance(&self) -> f64 {
        self.variance()
    }

    fn describe(&self) -> String {
        format!(
            "{}-d lag-grid kernel (half width {}, K(0) = {})",
            self.dims(),
            self.half_width(),
            self.variance()
        )
    }
}

/// `s² exp(−‖r‖² / 2ℓ²)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbfKernel {
    pub lengthscale: f64,
    pub variance: f64,
}

impl RbfKernel {
    pub fn new(lengthscale: f64, variance: f64) -> Result<Self> {
        if !(lengthscale > 0.0 && lengthscale.is_finite() && variance > 0.0 && variance.is_finite()) {
            return Err(Error::invalid(format!(
                "rbf needs lengthscale > 0 and variance > 0, got {lengthscale}, {variance}"
            )));
        }
        Ok(RbfKernel {
            lengthscale,
            variance,
        })
    }

    pub fn eval(&self, lag: Point) -> f64 {
        let d2 = (lag[0] * lag[0] + lag[1] * lag[1]) as f64;
        self.variance * (-d2 / (2.0 * self.lengthscale * self.lengthscale)).exp()
    }

    /// Tabulate on a lag grid.
    pub fn to_stationary(&self, dims: usize, half_width: usize) -> Result<StationaryKernel> {
        let shell = StationaryKernel::from_raw(dims, half_width, vec![]);
        let values = shell.lags().map(|lag| self.eval(lag)).collect();
        StationaryKernel::new(dims, half_width, values)
    }
}

impl Covariance for RbfKernel {
    fn cov(&self, lag: Point) -> Result<f64> {
        Ok(self.eval(lag))
    }

    fn prior_variance(&self) -> f64 {
        self.variance
    }

    fn describe(&self) -> String {
        format!("rbf kernel (lengthscale {}, variance {})", self.lengthscale, self.variance)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma_n: f64,
}

impl NoiseModel {
    pub fn new(sigma_n: f64) -> Result<Self> {
        if !(sigma_n >= 0.0 && sigma_n.is_finite()) {
            return Err(Error::invalid(format!("sigma_n must be >= 0, got {sigma_n}")));
        }
        Ok(NoiseModel { sigma_n })
    }

    pub fn noiseless() -> Self {
        NoiseModel { sigma_n: 0.0 }
    }
}

pub fn gram(k: &impl Covariance, a: &[Point], b: &[Point]) -> Result<Matrix> {
    let mut m = Matrix::zeros(a.len(), b.len());
    for (i, p) in a.iter().enumerate() {
        for (j, q) in b.iter().enumerate() {
            m.set(i, j, k.cov([p[0] - q[0], p[1] - q[1]])?);
        }
    }
    Ok(m)
}

/// Cholesky factor of `K + σ_n² I` and the extra diagonal jitter it took.
pub struct Factor {
    pub chol: Cholesky,
    /// Absolute jitter added on top of `σ_n²`.
    pub jitter: f64,
}

/// Factor `K + (σ_n² + jitter) I`, escalating the jitter on failure. A
/// jitter floor of `1e-8 K(0)` always applies when `σ_n = 0`.
pub fn factor(k: &impl Covariance, points: &[Point], noise: NoiseModel) -> Result<Factor> {
    if points.len() > MAX_POINTS {
        return Err(Error::invalid(format!(
            "{} points exceed the dense limit of {MAX_POINTS}",
            points.len()
        )));
    }
    let mut g = gram(k, points, points)?;
    let k0 = k.prior_variance();
    let noise_var = noise.sigma_n * noise.sigma_n;
    g.add_diagonal(noise_var);
    let ladder: Vec<f64> = if noise_var == 0.0 {
        JITTER_LADDER.to_vec()
    } else {
        std::iter::once(0.0).chain(JITTER_LADDER).collect()
    };
    let mut applied = 0.0;
    for rel in ladder {
        let jitter = rel * k0;
        g.add_diagonal(jitter - applied);
        applied = jitter;
        match Cholesky::new(&g) {
            Ok(chol) => return Ok(Factor { chol, jitter }),
            Err(e) if e.is_numerical() => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Numerical(format!(
        "Gram matrix of the {} is not positive definite even with jitter {:e}",
        k.describe(),
        applied
    )))
}

/// `n` draws from `N(0, Gram)` on `points`.
pub fn sample_prior(k: &impl Covariance, points: &[Point], rng: &mut Rng, n: usize) -> Result<Vec<Vec<f64>>> {
    if n == 0 || points.is_empty() {
        return Ok(vec![Vec::new(); n]);
    }
    let f = factor(k, points, NoiseModel::noiseless())?;
    let mut z = vec![0.0; points.len()];
    Ok((0..n)
        .map(|_| {
            rng.fill_normal(&mut z, 1.0);
            f.chol.mul_lower(&z)
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpPosterior {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub jitter: f64,
}

fn check_observations(points: &[Point], values: &[f64]) -> Result<()> {
    if points.len() != values.len() {
        return Err(Error::shape(format!(
            "{} observation points for {} values",
            points.len(),
            values.len()
        )));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("observation {v}")));
    }
    Ok(())
}

/// Posterior mean `K*ᵀ (K + σ_n² I)⁻¹ y` and variance
/// `K(0) − diag(K*ᵀ (K + σ_n² I)⁻¹ K*)` at the query points.
pub fn posterior(
    k: &impl Covariance,
    points: &[Point],
    values: &[f64],
    noise: NoiseModel,
    query: &[Point],
) -> Result<GpPosterior> {
    check_observations(points, values)?;
    let k0 = k.prior_variance();
    if points.is_empty() {
        return Ok(GpPosterior {
            mean: vec![0.0; query.len()],
            variance: vec![k0; query.len()],
            jitter: 0.0,
        });
    }
    let f = factor(k, points, noise)?;
    let alpha = f.chol.solve(values);
    let kstar = gram(k, points, query)?;
    let mean = (0..query.len())
        .map(|j| (0..points.len()).map(|i| kstar.get(i, j) * alpha[i]).sum())
        .collect();
    let v = f.chol.solve_lower_matrix(&kstar);
    let mut reduction = vec![0.0; query.len()];
    for i in 0..points.len() {
        for (r, x) in reduction.iter_mut().zip(v.row(i)) {
            *r += x * x;
        }
    }
    let variance = reduction.iter().map(|r| (k0 - r).max(0.0)).collect();
    Ok(GpPosterior {
        mean,
        variance,
        jitter: f.jitter,
    })
}

/// `−½ yᵀ(K + σ_n² I)⁻¹y − ½ log det(K + σ_n² I) − (n/2) log 2π`.
pub fn log_marginal_likelihood(k: &impl Covariance, points: &[Point], values: &[f64], noise: NoiseModel) -> Result<f64> {
    check_observations(points, values)?;
    if points.is_empty() {
        return Ok(0.0);
    }
    let f = factor(k, points, noise)?;
    let alpha = f.chol.solve(values);
    let fit: f64 = values.iter().zip(&alpha).map(|(a, b)| a * b).sum();
    let n = points.len() as f64;
    Ok(-0.5 * fit - 0.5 * f.chol.log_det() - 0.5 * n * (2.0 * std::f64::consts::PI).ln())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbfFit {
    pub kernel: RbfKernel,
    pub log_marginal_likelihood: f64,
    /// `(ℓ, log marginal likelihood)` for every grid point that evaluated.
    pub scores: Vec<(f64, f64)>,
}

/// Grid search over lengthscales. The observations are centred, the
/// variance is fixed to their sample variance, and ties go to the smaller
/// lengthscale.
pub fn fit_rbf(points: &[Point], values: &[f64], noise: NoiseModel, grid: &[f64]) -> Result<RbfFit> {
    check_observations(points, values)?;
    if grid.is_empty() {
        return Err(Error::invalid("empty lengthscale grid"));
    }
    if values.is_empty() {
        return Err(Error::invalid("no observations to fit"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let centred: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let variance = if values.len() > 1 {
        centred.iter().map(|v| v * v).sum::<f64>() / (n - 1.0)
    } else {
        values[0] * values[0]
    }
    .max(f64::EPSILON);
    let mut sorted = grid.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut best: Option<(RbfKernel, f64)> = None;
    let mut scores = Vec::new();
    for &l in &sorted {
        let Ok(k) = RbfKernel::new(l, variance) else {
            continue;
        };
        let Ok(lml) = log_marginal_likelihood(&k, points, &centred, noise) else {
            continue;
        };
        if !lml.is_finite() {
            continue;
        }
        scores.push((l, lml));
        if best.is_none_or(|(_, b)| lml > b) {
            best = Some((k, lml));
        }
    }
    let (kernel, lml) = best.ok_or_else(|| Error::Numerical("no lengthscale gave a finite likelihood".into()))?;
    Ok(RbfFit {
        kernel,
        log_marginal_likelihood: lml,
        scores,
    })
}

/// Pixel coordinates `[row, col]` in raster order.
pub fn pixel_points(height: usize, width: usize) -> Vec<Point> {
    (0..height as i64)
        .flat_map(|y| (0..width as i64).map(move |x| [y, x]))
        .collect()
}

/// Per-channel GP regression of an image from its observed pixels. Each
/// channel is centred by its observed mean, which is added back to the
/// posterior mean. Without observation noise the observed pixels are
/// returned exactly, with zero variance.
pub fn posterior_image(
    k: &impl Covariance,
    observed: &ImageBuffer,
    mask: &Mask,
    noise: NoiseModel,
) -> Result<(ImageBuffer, ImageBuffer, f64)> {
    if (mask.height, mask.width) != (observed.height, observed.width) {
        return Err(Error::shape("mask does not match image extents"));
    }
    let all = pixel_points(observed.height, observed.width);
    let obs_idx: Vec<usize> = (0..all.len()).filter(|&i| mask.observed[i]).collect();
    let pts: Vec<Point> = obs_idx.iter().map(|&i| all[i]).collect();
    let c = observed.channels;
    let mut mean_img = observed.clone();
    let mut var_img = observed.clone();
    let mut jitter = 0.0f64;
    for ch in 0..c {
        let vals: Vec<f64> = obs_idx.iter().map(|&i| observed.values[i * c + ch]).collect();
        let offset = if vals.is_empty() { 0.0 } else { vals.iter().sum::<f64>() / vals.len() as f64 };
        let centred: Vec<f64> = vals.iter().map(|v| v - offset).collect();
        let post = posterior(k, &pts, &centred, noise, &all)?;
        jitter = jitter.max(post.jitter);
        for i in 0..all.len() {
            mean_img.values[i * c + ch] = post.mean[i] + offset;
            var_img.values[i * c + ch] = post.variance[i];
        }
        // a noiseless posterior interpolates exactly; drop the jitter residue
        if noise.sigma_n == 0.0 {
            for &i in &obs_idx {
                mean_img.values[i * c + ch] = observed.values[i * c + ch];
                var_img.values[i * c + ch] = 0.0;
            }
        }
    }
    Ok((mean_img, var_img, jitter))
}
