//! Dense-inverse oracle for exact GP regression.

use dipgp::gp::{posterior, Covariance, GpPosterior, NoiseModel, RbfKernel};
use dipgp::kernel::{derive_kernel, Point};
use dipgp::net::{preset, PresetOptions};
use dipgp::{InputKernel, Rng, StationaryKernel};
use nalgebra::{DMatrix, DVector};

pub fn dense(k: &impl Covariance, a: &[Point], b: &[Point]) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| {
        k.cov([a[i][0] - b[j][0], a[i][1] - b[j][1]]).unwrap()
    })
}

/// Mean and variance from an explicit inverse of `K + s I`.
pub fn oracle(k: &impl Covariance, x: &[Point], y: &[f64], s: f64, q: &[Point]) -> (Vec<f64>, Vec<f64>) {
    let mut kxx = dense(k, x, x);
    for i in 0..x.len() {
        kxx[(i, i)] += s;
    }
    let inv = kxx.try_inverse().expect("invertible");
    let kxq = dense(k, x, q);
    let mean = kxq.transpose() * (&inv * DVector::from_column_slice(y));
    let red = (kxq.transpose() * &inv * &kxq).diagonal();
    let k0 = k.prior_variance();
    (mean.iter().copied().collect(), red.iter().map(|r| (k0 - r).max(0.0)).collect())
}

#[derive(Clone, Debug)]
pub enum Kern {
    Rbf(RbfKernel),
    Derived(StationaryKernel),
}

impl Kern {
    pub fn posterior(&self, x: &[Point], y: &[f64], noise: NoiseModel, q: &[Point]) -> GpPosterior {
        match self {
            Kern::Rbf(r) => posterior(r, x, y, noise, q).unwrap(),
            Kern::Derived(s) => posterior(s, x, y, noise, q).unwrap(),
        }
    }

    pub fn oracle(&self, x: &[Point], y: &[f64], s: f64, q: &[Point]) -> (Vec<f64>, Vec<f64>) {
        match self {
            Kern::Rbf(r) => oracle(r, x, y, s, q),
            Kern::Derived(k) => oracle(k, x, y, s, q),
        }
    }
}

/// Kernel of `conv_depth` on a Gaussian-filtered input.
pub fn derived(depth: usize, dims: usize, filter_std: f64) -> StationaryKernel {
    let opts = PresetOptions {
        dims,
        input_kernel: InputKernel::GaussianFiltered { sigma: 1.0, filter_std },
        half_width: 40,
        ..Default::default()
    };
    derive_kernel(&preset(&format!("conv_{depth}"), &opts).unwrap()).unwrap().kernel
}

pub fn values(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = Rng::new(seed, 0);
    (0..n).map(|_| rng.normal()).collect()
}

/// Largest mean or variance gap between the library and the oracle, which
/// is given the library's jitter.
pub fn oracle_gap(k: &Kern, x: &[Point], y: &[f64], sigma_n: f64, q: &[Point]) -> f64 {
    let p = k.posterior(x, y, NoiseModel::new(sigma_n).unwrap(), q);
    let (mean, var) = k.oracle(x, y, sigma_n * sigma_n + p.jitter, q);
    (0..q.len())
        .map(|j| (p.mean[j] - mean[j]).abs().max((p.variance[j] - var[j]).abs()))
        .fold(0.0, f64::max)
}

/// Worst noiseless misfit at the training points relative to `‖y‖∞`, and
/// the largest posterior variance there.
pub fn interpolation_gap(k: &Kern, x: &[Point], y: &[f64]) -> (f64, f64) {
    let p = k.posterior(x, y, NoiseModel::noiseless(), x);
    let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let misfit = (0..x.len()).map(|i| (p.mean[i] - y[i]).abs() / scale).fold(0.0, f64::max);
    (misfit, p.variance.iter().copied().fold(0.0, f64::max))
}

/// Largest increase of posterior variance at `q` when `extra` points join `x`.
pub fn variance_increase(k: &Kern, x: &[Point], extra: &[Point], sigma_n: f64, q: &[Point]) -> f64 {
    let mut all = x.to_vec();
    all.extend(extra.iter().filter(|p| !x.contains(p)));
    let noise = NoiseModel::new(sigma_n).unwrap();
    let few = k.posterior(x, &vec![0.0; x.len()], noise, q);
    let many = k.posterior(&all, &vec![0.0; all.len()], noise, q);
    (0..q.len()).map(|j| many.variance[j] - few.variance[j]).fold(f64::NEG_INFINITY, f64::max)
}

pub fn random_kernel(rng: &mut Rng, dims: usize, max_lengthscale: f64) -> Kern {
    if rng.below(2) == 0 {
        let l = 0.3 + (max_lengthscale - 0.3) * rng.uniform();
        Kern::Rbf(RbfKernel::new(l, 0.2 + 3.8 * rng.uniform()).unwrap())
    } else {
        Kern::Derived(derived(1 + rng.below(3), dims, 0.5 + rng.uniform()))
    }
}

/// Up to `max_n` distinct points inside a `span`-sided box.
pub fn random_points(rng: &mut Rng, dims: usize, span: i64, max_n: usize) -> Vec<Point> {
    let n = 1 + rng.below(max_n);
    let mut set = std::collections::BTreeSet::new();
    for _ in 0..n {
        let a = rng.below(span as usize) as i64;
        let b = if dims == 2 { rng.below(span as usize) as i64 } else { 0 };
        set.insert([a, b]);
    }
    set.into_iter().collect()
}
