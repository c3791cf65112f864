//! Layer transfer rules for stationary covariances and the spec compiler.
//!
//! In the wide limit a random conv layer scales the covariance, a pointwise
//! nonlinearity maps the correlation `ρ = K(r)/K(0)` lag by lag, a bias adds
//! a constant, and resampling rescales the lag axis.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{gaussian_filtered_kernel, white_kernel, StationaryKernel, MAX_HALF_WIDTH_1D, MAX_HALF_WIDTH_2D};
use crate::error::{Error, Result};
use crate::net::spec::{InputKernel, Layer, NetworkSpec};
use crate::tensor::{Activation, DownMode, MergeKind, Resample};

pub fn transfer_conv(k: &StationaryKernel, gain: f64) -> Result<StationaryKernel> {
    if !(gain > 0.0 && gain.is_finite()) {
        return Err(Error::invalid(format!("conv gain must be > 0, got {gain}")));
    }
    Ok(k.map(|v| gain * v))
}

/// Arcsine map for erf, arc-cosine map for ReLU.
pub fn transfer_nonlinearity(k: &StationaryKernel, kind: Activation) -> Result<StationaryKernel> {
    let k0 = k.variance();
    if !(k0 > 0.0 && k0.is_finite()) {
        return Err(Error::NonFinite(format!("kernel variance {k0}")));
    }
    if let Some(v) = k.values().iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("kernel value {v}")));
    }
    let out = match kind {
        Activation::Erf => k.map(|v| {
            let rho = (v / k0).clamp(-1.0, 1.0);
            2.0 / PI * rho.asin()
        }),
        Activation::Relu => k.map(|v| {
            let rho = (v / k0).clamp(-1.0, 1.0);
            let theta = rho.acos();
            k0 / (2.0 * PI) * (theta.sin() + (PI - theta) * rho)
        }),
    };
    // pin K(0) to its exact closed form
    let mut values = out.values().to_vec();
    let mid = values.len() / 2;
    values[mid] = match kind {
        Activation::Erf => 1.0,
        Activation::Relu => k0 / 2.0,
    };
    Ok(StationaryKernel::from_raw(k.dims(), k.half_width(), values))
}

pub fn transfer_bias(k: &StationaryKernel, sigma_b: f64) -> Result<StationaryKernel> {
    if !(sigma_b >= 0.0 && sigma_b.is_finite()) {
        return Err(Error::invalid(format!("sigma_b must be >= 0, got {sigma_b}")));
    }
    let b2 = sigma_b * sigma_b;
    Ok(k.map(|v| v + b2))
}

/// Keys cubic convolution weight (a = -1/2).
fn cubic_weight(x: f64) -> f64 {
    let a = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        (a + 2.0) * x * x * x - (a + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        a * x * x * x - 5.0 * a * x * x + 8.0 * a * x - 4.0 * a
    } else {
        0.0
    }
}

/// Indices and weights of the four cubic-interpolation neighbours of
/// `s`, clamped to `[-l, l]`.
fn cubic_stencil(s: f64, l: i64) -> [(i64, f64); 4] {
    let i0 = s.floor();
    let f = s - i0;
    let i0 = i0 as i64;
    if f == 0.0 {
        return [(i0.clamp(-l, l), 1.0), (0, 0.0), (0, 0.0), (0, 0.0)];
    }
    [
        ((i0 - 1).clamp(-l, l), cubic_weight(f + 1.0)),
        (i0.clamp(-l, l), cubic_weight(f)),
        ((i0 + 1).clamp(-l, l), cubic_weight(1.0 - f)),
        ((i0 + 2).clamp(-l, l), cubic_weight(2.0 - f)),
    ]
}

fn grid(dims: usize, half_width: usize, f: impl Fn([i64; 2]) -> f64) -> Vec<f64> {
    let l = half_width as i64;
    match dims {
        1 => (-l..=l).map(|r| f([r, 0])).collect(),
        _ => (-l..=l)
            .flat_map(|a| (-l..=l).map(move |b| [a, b]))
            .map(f)
            .collect(),
    }
}

/// Covariance after resampling every spatial axis by `op`'s factor.
///
/// Decimation reads `K(τr)`; average pooling first correlates `K` with the
/// triangular autocorrelation of the width-τ box filter. Upsampling reads
/// `K(r/τ)` with fractional lags interpolated by cubic convolution, which is
/// exact at multiples of τ and approximate in between.
pub fn transfer_resample(k: &StationaryKernel, op: Resample) -> Result<StationaryKernel> {
    let dims = k.dims();
    let l = k.half_width();
    let li = l as i64;
    let at = |lag: [i64; 2]| k.get(lag).expect("lag inside grid");
    match op {
        Resample::Down { factor, mode } => {
            if factor < 2 {
                return Err(Error::invalid(format!("resampling factor must be >= 2, got {factor}")));
            }
            let tau = factor as i64;
            let (new_l, source): (usize, Box<dyn Fn([i64; 2]) -> f64>) = match mode {
                DownMode::Decimate => (l / factor, Box::new(at)),
                DownMode::Avgpool => {
                    if l + 1 < factor {
                        return Err(Error::invalid("insufficient grid support for average pooling"));
                    }
                    let tri = move |s: i64| (tau - s.abs()) as f64 / (tau * tau) as f64;
                    let filtered = move |lag: [i64; 2]| -> f64 {
                        let mut acc = 0.0;
                        for s0 in -(tau - 1)..tau {
                            if dims == 1 {
                                acc += tri(s0) * at([lag[0] - s0, 0]);
                            } else {
                                for s1 in -(tau - 1)..tau {
                                    acc += tri(s0) * tri(s1) * at([lag[0] - s0, lag[1] - s1]);
                                }
                            }
                        }
                        acc
                    };
                    ((l + 1 - factor) / factor, Box::new(filtered))
                }
            };
            if new_l == 0 {
                return Err(Error::invalid(format!(
                    "insufficient grid support: half width {l} cannot be downsampled by {factor}"
                )));
            }
            let values = grid(dims, new_l, |r| source([r[0] * tau, r[1] * tau]));
            Ok(StationaryKernel::from_raw(dims, new_l, values))
        }
        Resample::Up { factor, .. } => {
            if factor < 2 {
                return Err(Error::invalid(format!("resampling factor must be >= 2, got {factor}")));
            }
            let new_l = l * factor;
            let cap = if dims == 1 { MAX_HALF_WIDTH_1D } else { MAX_HALF_WIDTH_2D };
            if new_l > cap {
                return Err(Error::invalid(format!(
                    "insufficient grid support: upsampled half width {new_l} exceeds {cap}"
                )));
            }
            let tau = factor as f64;
            let values = grid(dims, new_l, |r| {
                let s0 = cubic_stencil(r[0] as f64 / tau, li);
                if dims == 1 {
                    s0.iter().map(|&(i, w)| w * at([i, 0])).sum()
                } else {
                    let s1 = cubic_stencil(r[1] as f64 / tau, li);
                    s0.iter()
                        .map(|&(i, wi)| wi * s1.iter().map(|&(j, wj)| wj * at([i, j])).sum::<f64>())
                        .sum()
                }
            });
            Ok(StationaryKernel::from_raw(dims, new_l, values))
        }
    }
}

/// Merge covariance. `Add` sums independent branches; `Concat` is the
/// channel-weighted mixture a following i.i.d.-weight conv sees.
pub fn transfer_skip(
    ka: &StationaryKernel,
    kb: &StationaryKernel,
    kind: MergeKind,
    channels_a: usize,
    channels_b: usize,
) -> Result<StationaryKernel> {
    if ka.dims() != kb.dims() || ka.half_width() != kb.half_width() {
        return Err(Error::shape(format!(
            "kernel grids differ: {}-d/L={} vs {}-d/L={}",
            ka.dims(),
            ka.half_width(),
            kb.dims(),
            kb.half_width()
        )));
    }
    let values = match kind {
        MergeKind::Add => ka.values().iter().zip(kb.values()).map(|(a, b)| a + b).collect(),
        MergeKind::Concat => {
            if channels_a + channels_b == 0 {
                return Err(Error::invalid("concat of zero channels"));
            }
            let (wa, wb) = (channels_a as f64, channels_b as f64);
            let total = wa + wb;
            ka.values()
                .iter()
                .zip(kb.values())
                .map(|(a, b)| (wa * a + wb * b) / total)
                .collect()
        }
    };
    Ok(StationaryKernel::from_raw(ka.dims(), ka.half_width(), values))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TraceEntry {
    /// Layer index, `None` for the input kernel.
    pub layer: Option<usize>,
    pub op: String,
    /// True when the step used interpolated (fractional-lag) reads.
    pub approximate: bool,
    pub variance: f64,
    pub kernel: StationaryKernel,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Derivation {
    pub kernel: StationaryKernel,
    pub trace: Vec<TraceEntry>,
}

impl Derivation {
    pub fn approximate(&self) -> bool {
        self.trace.iter().any(|e| e.approximate)
    }
}

/// Covariance of the spec's input channels on its lag grid.
pub fn input_kernel(spec: &NetworkSpec) -> Result<StationaryKernel> {
    match spec.input.kernel {
        InputKernel::White { sigma } => white_kernel(sigma, spec.dims, spec.half_width),
        InputKernel::GaussianFiltered { sigma, filter_std } => {
            gaussian_filtered_kernel(sigma, filter_std, spec.dims, spec.half_width)
        }
    }
}

/// Fold the layer list through the transfer rules.
pub fn derive_kernel(spec: &NetworkSpec) -> Result<Derivation> {
    let acts = spec.activations()?;
    let k_in = input_kernel(spec)?;
    let mut trace = vec![TraceEntry {
        layer: None,
        op: "input".into(),
        approximate: false,
        variance: k_in.variance(),
        kernel: k_in.clone(),
    }];
    let mut kernels = vec![k_in];
    for (i, layer) in spec.layers.iter().enumerate() {
        let cur = &kernels[i];
        let (next, op, approximate) = match *layer {
            Layer::Conv { out_channels, width, .. } => {
                let gain = spec.conv_gain(i);
                (
                    transfer_conv(cur, gain),
                    format!("conv(out={out_channels}, width={width}, gain={gain})"),
                    false,
                )
            }
            Layer::Act { kind } => (transfer_nonlinearity(cur, kind), format!("{kind:?}").to_lowercase(), false),
            Layer::Bias { sigma_b } => (transfer_bias(cur, sigma_b), format!("bias({sigma_b})"), false),
            Layer::Down { factor, mode } => (
                transfer_resample(cur, Resample::Down { factor, mode }),
                format!("down({factor}, {mode:?})").to_lowercase(),
                false,
            ),
            Layer::Up { factor, mode } => (
                transfer_resample(cur, Resample::Up { factor, mode }),
                format!("up({factor}, {mode:?})").to_lowercase(),
                true,
            ),
            Layer::Skip { source, kind } => {
                let src = &kernels[source];
                let common = cur.half_width().min(src.half_width());
                let merged = cur.crop(common).and_then(|a| {
                    src.crop(common).and_then(|b| {
                        transfer_skip(&a, &b, kind, acts[i].channels, acts[source].channels)
                    })
                });
                (merged, format!("skip(source={source}, {kind:?})").to_lowercase(), false)
            }
        };
        let next = next.map_err(|e| e.at_layer(i))?;
        next.check().map_err(|e| e.at_layer(i))?;
        trace.push(TraceEntry {
            layer: Some(i),
            op,
            approximate,
            variance: next.variance(),
            kernel: next.clone(),
        });
        kernels.push(next);
    }
    Ok(Derivation {
        kernel: kernels.pop().expect("input kernel present"),
        trace,
    })
}
