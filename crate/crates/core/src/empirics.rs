//! Monte Carlo estimates of the output covariance of finite random networks.
//!
//! Each sample draws a fresh input and fresh weights, runs the network with
//! circular padding and keeps output channel 0. Under circular padding the
//! output is exactly stationary, so the second moment is averaged over all
//! positions as well as over samples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::StationaryKernel;
use crate::net::{forward_with, init, Layer, NetworkSpec};
use crate::rng::Rng;
use crate::tensor::{Padding, Tensor};

/// Copy of `spec` whose last conv produces a single channel, when nothing
/// after it mixes channels. Channel 0 of the output has the same law either
/// way, and the trimmed net is much cheaper.
fn trimmed(spec: &NetworkSpec) -> NetworkSpec {
    let mut out = spec.clone();
    let Some(last_conv) = out.layers.iter().rposition(|l| matches!(l, Layer::Conv { .. })) else {
        return out;
    };
    if out.layers[last_conv + 1..].iter().any(|l| matches!(l, Layer::Skip { .. } | Layer::Bias { .. })) {
        return out;
    }
    let gain = out.conv_gain(last_conv);
    if let Layer::Conv { out_channels, gain: g, .. } = &mut out.layers[last_conv] {
        *out_channels = 1;
        *g = Some(gain);
    }
    out
}

/// One draw of output channel 0 for an input of extent `length` per axis.
pub fn sample_output(spec: &NetworkSpec, rng: &mut Rng, length: usize) -> Result<Tensor> {
    let spec = trimmed(spec);
    let extent = vec![length; spec.dims];
    let (params, input) = init(&spec, &extent, rng.next_u64())?;
    let out = forward_with(&spec, &params, &input.x, Padding::Circular)?.into_output();
    Ok(out.select_channel(0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceEstimate {
    pub dims: usize,
    pub half_width: usize,
    /// `K̂(r)` on the lag grid, storage order as in [`StationaryKernel`].
    pub values: Vec<f64>,
    /// Standard error of each `K̂(r)` across samples.
    pub stderr: Vec<f64>,
    /// `ρ̂(r) = K̂(r) / K̂(0)`.
    pub rho: Vec<f64>,
    /// Delta-method standard error of `ρ̂(r)`.
    pub rho_stderr: Vec<f64>,
    pub n_samples: usize,
}

impl CovarianceEstimate {
    fn index(&self, lag: [i64; 2]) -> Option<usize> {
        StationaryKernel::from_raw(self.dims, self.half_width, Vec::new()).index(lag)
    }

    pub fn rho_at(&self, lag: [i64; 2]) -> Option<f64> {
        self.index(lag).map(|i| self.rho[i])
    }

    pub fn rho_stderr_at(&self, lag: [i64; 2]) -> Option<f64> {
        self.index(lag).map(|i| self.rho_stderr[i])
    }

    pub fn variance(&self) -> f64 {
        self.values[self.values.len() / 2]
    }
}

/// Position-averaged circular second moment `(1/N) Σ_t z(t) z(t + r)` of
/// one sample, symmetrised over `±r`.
fn circular_moments(z: &Tensor, dims: usize, half_width: usize) -> Vec<f64> {
    let l = half_width as i64;
    let side = 2 * half_width + 1;
    let data = z.data();
    match dims {
        1 => {
            let n = data.len();
            let mut m = vec![0.0; side];
            for r in 0..=l {
                let s: f64 = (0..n).map(|t| data[t] * data[(t + r as usize) % n]).sum();
                let v = s / n as f64;
                m[(l + r) as usize] = v;
                m[(l - r) as usize] = v;
            }
            m
        }
        _ => {
            let (h, w) = (z.spatial()[0], z.spatial()[1]);
            let n = (h * w) as f64;
            let mut m = vec![0.0; side * side];
            let at = |y: i64, x: i64| data[(y.rem_euclid(h as i64) * w as i64 + x.rem_euclid(w as i64)) as usize];
            for r0 in -l..=l {
                for r1 in -l..=l {
                    let mut s = 0.0;
                    for y in 0..h as i64 {
                        for x in 0..w as i64 {
                            s += at(y, x) * at(y + r0, x + r1);
                        }
                    }
                    m[((r0 + l) as usize) * side + (r1 + l) as usize] = s / n;
                }
            }
            // K̂(r) and K̂(−r) coincide for circular sums; average anyway so
            // the symmetry is exact in floating point
            let k = m.len();
            for i in 0..k / 2 {
                let v = 0.5 * (m[i] + m[k - 1 - i]);
                m[i] = v;
                m[k - 1 - i] = v;
            }
            m
        }
    }
}

/// Average the output's spatial second moment over `n_samples` networks,
/// each drawn from its own substream of `rng`, on the spec's lag grid.
pub fn estimate_covariance(
    spec: &NetworkSpec,
    n_samples: usize,
    length: usize,
    rng: &Rng,
) -> Result<CovarianceEstimate> {
    estimate_covariance_on(spec, n_samples, length, spec.half_width, rng)
}

/// As [`estimate_covariance`] with an explicit lag half width.
pub fn estimate_covariance_on(
    spec: &NetworkSpec,
    n_samples: usize,
    length: usize,
    half_width: usize,
    rng: &Rng,
) -> Result<CovarianceEstimate> {
    if n_samples < 100 {
        return Err(Error::invalid(format!("need at least 100 samples, got {n_samples}")));
    }
    moments_from_samples(spec, n_samples, length, half_width, rng)
}

pub(crate) fn moments_from_samples(
    spec: &NetworkSpec,
    n_samples: usize,
    length: usize,
    half_width: usize,
    rng: &Rng,
) -> Result<CovarianceEstimate> {
    if n_samples < 2 {
        return Err(Error::invalid("need at least two samples"));
    }
    let out_extent = spec.output_extent(&vec![length; spec.dims])?;
    let t_out = out_extent[0];
    if t_out < 4 * half_width {
        return Err(Error::invalid(format!(
            "output extent {t_out} is shorter than 4 × half width {half_width}"
        )));
    }
    let mut per_sample = Vec::with_capacity(n_samples);
    for s in 0..n_samples {
        let mut r = rng.substream(s as u64);
        let z = sample_output(spec, &mut r, length)?;
        per_sample.push(circular_moments(&z, spec.dims, half_width));
    }
    Ok(summarize(spec.dims, half_width, &per_sample))
}

/// Means, standard errors and correlation estimates from per-sample moments.
fn summarize(dims: usize, half_width: usize, per_sample: &[Vec<f64>]) -> CovarianceEstimate {
    let n = per_sample.len() as f64;
    let k = per_sample[0].len();
    let mid = k / 2;
    let mean: Vec<f64> = (0..k).map(|j| per_sample.iter().map(|m| m[j]).sum::<f64>() / n).collect();
    let stderr: Vec<f64> = (0..k)
        .map(|j| {
            let var = per_sample.iter().map(|m| (m[j] - mean[j]).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        })
        .collect();
    let k0 = mean[mid];
    let rho: Vec<f64> = mean.iter().map(|v| if k0 > 0.0 { v / k0 } else { 0.0 }).collect();
    let rho_stderr = (0..k)
        .map(|j| {
            if k0 <= 0.0 || j == mid {
                return 0.0;
            }
            // linearise K̂(r)/K̂(0) around the means
            let resid: Vec<f64> = per_sample.iter().map(|m| m[j] - rho[j] * m[mid]).collect();
            let rm = resid.iter().sum::<f64>() / n;
            let var = resid.iter().map(|x| (x - rm).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt() / k0
        })
        .collect();
    CovarianceEstimate {
        dims,
        half_width,
        values: mean,
        stderr,
        rho,
        rho_stderr,
        n_samples: per_sample.len(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagRow {
    pub lag: Vec<i64>,
    pub rho: f64,
    pub rho_hat: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub max_abs_rho_err: f64,
    pub l_check: usize,
    pub n_samples: usize,
    pub rows: Vec<LagRow>,
}

/// Largest `|ρ̂(r) − ρ(r)|` over lags with every component at most
/// `l_check` in magnitude. Rows list non-negative lags (first nonzero
/// component positive), since both sides are symmetric.
pub fn compare(
    analytic: &StationaryKernel,
    empirical: &CovarianceEstimate,
    l_check: usize,
) -> Result<ComparisonReport> {
    if analytic.dims() != empirical.dims {
        return Err(Error::shape(format!(
            "{}-d kernel compared with a {}-d estimate",
            analytic.dims(),
            empirical.dims
        )));
    }
    if l_check > analytic.half_width() || l_check > empirical.half_width {
        return Err(Error::shape(format!(
            "check window {l_check} exceeds a grid (kernel {}, estimate {})",
            analytic.half_width(),
            empirical.half_width
        )));
    }
    let l = l_check as i64;
    let lags: Vec<[i64; 2]> = match analytic.dims() {
        1 => (0..=l).map(|r| [r, 0]).collect(),
        _ => (-l..=l)
            .flat_map(|a| (-l..=l).map(move |b| [a, b]))
            .filter(|&[a, b]| a > 0 || (a == 0 && b >= 0))
            .collect(),
    };
    let mut rows = Vec::with_capacity(lags.len());
    let mut max_err = 0.0f64;
    for lag in lags {
        let rho = analytic.rho(lag).expect("inside kernel grid");
        let rho_hat = empirical.rho_at(lag).expect("inside estimate grid");
        max_err = max_err.max((rho_hat - rho).abs());
        rows.push(LagRow {
            lag: lag[..analytic.dims()].to_vec(),
            rho,
            rho_hat,
            stderr: empirical.rho_stderr_at(lag).expect("inside estimate grid"),
        });
    }
    Ok(ComparisonReport {
        max_abs_rho_err: max_err,
        l_check,
        n_samples: empirical.n_samples,
        rows,
    })
}
