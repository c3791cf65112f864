//! Invariants of derived kernels, as checks returning the first violation.

use dipgp::kernel::{derive_kernel, to_gram, transfer_conv, transfer_nonlinearity, transfer_resample, white_kernel, Point};
use dipgp::net::{preset, PresetOptions};
use dipgp::tensor::{Activation, DownMode, Resample, UpMode};
use dipgp::{InputKernel, Layer, NetworkSpec, Rng, StationaryKernel};
use nalgebra::DMatrix;

pub type Check = Result<(), String>;

pub fn symmetric(k: &StationaryKernel) -> Check {
    let k0 = k.variance();
    if !(k0 > 0.0 && k0.is_finite()) {
        return Err(format!("K(0) = {k0}"));
    }
    for lag in k.lags() {
        let a = k.get(lag).unwrap();
        let b = k.get([-lag[0], -lag[1]]).unwrap();
        if (a - b).abs() > 1e-12 * k0 {
            return Err(format!("K({lag:?}) = {a} but K(-r) = {b}"));
        }
    }
    Ok(())
}

pub fn bounded(k: &StationaryKernel) -> Check {
    for lag in k.lags() {
        let rho = k.rho(lag).unwrap();
        if rho.abs() > 1.0 + 1e-12 {
            return Err(format!("rho({lag:?}) = {rho}"));
        }
    }
    match k.rho([0, 0]).unwrap() {
        1.0 => Ok(()),
        r => Err(format!("rho(0) = {r}")),
    }
}

pub fn psd(k: &StationaryKernel, points: &[Point]) -> Check {
    let g = to_gram(k, points).unwrap();
    let n = points.len();
    let min = DMatrix::from_fn(n, n, |i, j| g.get(i, j)).symmetric_eigen().eigenvalues.min();
    if min < -1e-10 * k.variance() {
        return Err(format!("min eigenvalue {min}"));
    }
    Ok(())
}

/// Constant kernels stay constant under both nonlinearities and white
/// noise stays white under erf.
pub fn fixed_points(c: f64, dims: usize, l: usize) -> Check {
    let side = 2 * l + 1;
    let flat = StationaryKernel::new(dims, l, vec![c; side.pow(dims as u32)]).unwrap();
    let relu = transfer_nonlinearity(&flat, Activation::Relu).unwrap();
    if (relu.variance() - c / 2.0).abs() > 1e-12 * c {
        return Err(format!("relu K(0) = {} for c = {c}", relu.variance()));
    }
    let erf = transfer_nonlinearity(&flat, Activation::Erf).unwrap();
    for lag in flat.lags() {
        let (a, b) = (relu.rho(lag).unwrap(), erf.rho(lag).unwrap());
        if (a - 1.0).abs() >= 1e-12 || (b - 1.0).abs() >= 1e-12 {
            return Err(format!("constant kernel moved at {lag:?}: relu {a}, erf {b}"));
        }
    }
    let white = white_kernel(c.sqrt(), dims, l).unwrap();
    let out = transfer_nonlinearity(&white, Activation::Erf).unwrap();
    for lag in out.lags().filter(|&r| r != [0, 0]) {
        let v = out.get(lag).unwrap();
        if v.abs() >= 1e-15 {
            return Err(format!("white kernel gained K({lag:?}) = {v}"));
        }
    }
    Ok(())
}

/// ReLU correlations ignore a common rescaling of every conv gain.
pub fn gain_invariant(spec: &NetworkSpec, g: f64) -> Check {
    let base = derive_kernel(spec).unwrap().kernel;
    let mut scaled = spec.clone();
    for (i, layer) in scaled.layers.iter_mut().enumerate() {
        if let Layer::Conv { gain, .. } = layer {
            *gain = Some(g * spec.conv_gain(i));
        }
    }
    let k = derive_kernel(&scaled).unwrap().kernel;
    for lag in k.lags() {
        let (a, b) = (k.rho(lag).unwrap(), base.rho(lag).unwrap());
        if (a - b).abs() >= 1e-10 {
            return Err(format!("rho({lag:?}): {a} vs {b} at gain {g}"));
        }
    }
    Ok(())
}

pub fn conv_scales(k: &StationaryKernel, g: f64) -> Check {
    let out = transfer_conv(k, g).unwrap();
    for lag in k.lags() {
        let (a, b) = (out.get(lag).unwrap(), g * k.get(lag).unwrap());
        if (a - b).abs() > 1e-12 * g * k.variance() || (out.rho(lag).unwrap() - k.rho(lag).unwrap()).abs() >= 1e-12 {
            return Err(format!("K({lag:?}): {a} vs {b}"));
        }
    }
    Ok(())
}

/// Upsampling then decimating by the same factor restores the kernel.
pub fn resample_round_trip(k: &StationaryKernel, factor: usize, mode: UpMode) -> Check {
    let up = transfer_resample(k, Resample::Up { factor, mode }).unwrap();
    let back = transfer_resample(&up, Resample::Down { factor, mode: DownMode::Decimate }).unwrap();
    if back.half_width() != k.half_width() {
        return Err(format!("half width {} vs {}", back.half_width(), k.half_width()));
    }
    for lag in k.lags() {
        let (a, b) = (back.get(lag).unwrap(), k.get(lag).unwrap());
        if (a - b).abs() > 1e-12 * k.variance() {
            return Err(format!("K({lag:?}): {a} vs {b}"));
        }
    }
    Ok(())
}

pub fn options(dims: usize, input_kernel: InputKernel, activation: Activation, width: usize, hw: [usize; 2]) -> PresetOptions {
    PresetOptions {
        dims,
        channels: 8,
        input_channels: 8,
        input_kernel,
        activation,
        width,
        half_width: hw[dims - 1],
        ..Default::default()
    }
}

pub fn random_input(rng: &mut Rng) -> InputKernel {
    let sigma = 0.1 + 2.9 * rng.uniform();
    if rng.below(2) == 0 {
        InputKernel::White { sigma }
    } else {
        InputKernel::GaussianFiltered { sigma, filter_std: 0.3 + 1.2 * rng.uniform() }
    }
}

fn random_activation(rng: &mut Rng) -> Activation {
    [Activation::Relu, Activation::Erf][rng.below(2)]
}

/// Conv, autoencoder or U-net specs.
pub fn random_spec(rng: &mut Rng) -> NetworkSpec {
    let name = match rng.below(5) {
        d @ 0..=2 => format!("conv_{}", d + 1),
        3 => "ae_1".into(),
        _ => "unet_small".into(),
    };
    let dims = 1 + rng.below(2);
    let input = random_input(rng);
    let act = random_activation(rng);
    let width = [1, 3, 5][rng.below(3)];
    preset(&name, &options(dims, input, act, width, [24, 10])).unwrap()
}

/// ReLU chains without skips or biases.
pub fn random_relu_chain(rng: &mut Rng) -> NetworkSpec {
    let name = match rng.below(5) {
        d @ 0..=2 => format!("conv_{}", d + 1),
        d => format!("ae_{}", d - 2),
    };
    let dims = 1 + rng.below(2);
    let input = random_input(rng);
    let width = [1, 3][rng.below(2)];
    preset(&name, &options(dims, input, Activation::Relu, width, [24, 12])).unwrap()
}

/// Kernels with every lag exact (no fractional-lag upsampling).
pub fn random_exact_kernel(rng: &mut Rng) -> StationaryKernel {
    let depth = 1 + rng.below(3);
    let dims = 1 + rng.below(2);
    let input = random_input(rng);
    let act = random_activation(rng);
    let width = [1, 3][rng.below(2)];
    derive_kernel(&preset(&format!("conv_{depth}"), &options(dims, input, act, width, [24, 10])).unwrap())
        .unwrap()
        .kernel
}

pub fn random_points(rng: &mut Rng, dims: usize, span: i64) -> Vec<Point> {
    let n = 2 + rng.below(22);
    let mut v: Vec<Point> = (0..n)
        .map(|_| {
            let a = rng.below(span as usize + 1) as i64;
            [a, if dims == 2 { rng.below(span as usize + 1) as i64 } else { 0 }]
        })
        .collect();
    v.sort();
    v.dedup();
    v
}
