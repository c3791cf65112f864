use serde::{Deserialize, Serialize};

use super::{Padding, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// I.i.d. `N(0, sigma²)` entries.
pub fn gaussian_tensor(rng: &mut Rng, shape: &[usize], sigma: f64) -> Result<Tensor> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("sigma must be finite and >= 0, got {sigma}")));
    }
    if shape.is_empty() || shape.iter().any(|&e| e == 0) {
        return Err(Error::shape(format!("zero-size shape {shape:?}")));
    }
    let mut t = Tensor::zeros(shape);
    rng.fill_normal(t.data_mut(), sigma);
    Ok(t)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Erf,
    Relu,
}

pub fn activation(x: &Tensor, kind: Activation) -> Tensor {
    match kind {
        Activation::Erf => x.map(libm::erf),
        Activation::Relu => x.map(|v| v.max(0.0)),
    }
}

/// Pull `upstream` back through the activation evaluated at pre-activation `x`.
pub fn activation_grad(x: &Tensor, kind: Activation, upstream: &Tensor) -> Result<Tensor> {
    x.check_same_shape(upstream)?;
    let two_over_sqrt_pi = std::f64::consts::FRAC_2_SQRT_PI;
    let data = x
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&v, &g)| match kind {
            Activation::Erf => g * two_over_sqrt_pi * (-v * v).exp(),
            Activation::Relu => {
                if v > 0.0 {
                    g
                } else {
                    0.0
                }
            }
        })
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DownMode {
    Decimate,
    Avgpool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpMode {
    Nearest,
    Bilinear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Resample {
    Down { factor: usize, mode: DownMode },
    Up { factor: usize, mode: UpMode },
}

/// Sparse per-axis linear map; resampling is separable so a 2D resample is
/// two of these.
struct AxisMap {
    in_len: usize,
    taps: Vec<Vec<(usize, f64)>>,
}

impl AxisMap {
    fn build(op: Resample, n: usize, padding: Padding) -> Result<Self> {
        let taps = match op {
            Resample::Down { factor, mode } => {
                if factor == 0 || n % factor != 0 {
                    return Err(Error::shape(format!(
                        "extent {n} is not divisible by downsampling factor {factor}"
                    )));
                }
                (0..n / factor)
                    .map(|i| match mode {
                        DownMode::Decimate => vec![(i * factor, 1.0)],
                        DownMode::Avgpool => (0..factor)
                            .map(|k| (i * factor + k, 1.0 / factor as f64))
                            .collect(),
                    })
                    .collect()
            }
            Resample::Up { factor, mode } => {
                if factor == 0 {
                    return Err(Error::invalid("upsampling factor must be positive"));
                }
                (0..n * factor)
                    .map(|i| match mode {
                        UpMode::Nearest => vec![(i / factor, 1.0)],
                        UpMode::Bilinear => {
                            let s = (i as f64 + 0.5) / factor as f64 - 0.5;
                            let i0 = s.floor();
                            let frac = s - i0;
                            let i0 = i0 as isize;
                            let pick = |j: isize| match padding {
                                Padding::Circular => j.rem_euclid(n as isize) as usize,
                                Padding::Reflect => j.clamp(0, n as isize - 1) as usize,
                            };
                            if frac == 0.0 {
                                vec![(pick(i0), 1.0)]
                            } else {
                                vec![(pick(i0), 1.0 - frac), (pick(i0 + 1), frac)]
                            }
                        }
                    })
                    .collect()
            }
        };
        Ok(AxisMap { in_len: n, taps })
    }

    fn out_len(&self) -> usize {
        self.taps.len()
    }

    /// Apply along spatial axis `axis` of a tensor with `shape`.
    fn apply(&self, data: &[f64], shape: &[usize], axis: usize) -> (Vec<f64>, Vec<usize>) {
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out_shape = shape.to_vec();
        out_shape[axis] = self.out_len();
        let mut out = vec![0.0; outer * self.out_len() * inner];
        for o in 0..outer {
            let src = &data[o * self.in_len * inner..][..self.in_len * inner];
            let dst = &mut out[o * self.out_len() * inner..][..self.out_len() * inner];
            for (i, taps) in self.taps.iter().enumerate() {
                let row = &mut dst[i * inner..][..inner];
                for &(j, w) in taps {
                    for (d, s) in row.iter_mut().zip(&src[j * inner..][..inner]) {
                        *d += w * s;
                    }
                }
            }
        }
        (out, out_shape)
    }

    fn apply_adjoint(&self, data: &[f64], shape: &[usize], axis: usize) -> (Vec<f64>, Vec<usize>) {
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut in_shape = shape.to_vec();
        in_shape[axis] = self.in_len;
        let mut out = vec![0.0; outer * self.in_len * inner];
        for o in 0..outer {
            let src = &data[o * self.out_len() * inner..][..self.out_len() * inner];
            let dst = &mut out[o * self.in_len * inner..][..self.in_len * inner];
            for (i, taps) in self.taps.iter().enumerate() {
                let row = &src[i * inner..][..inner];
                for &(j, w) in taps {
                    for (d, s) in dst[j * inner..][..inner].iter_mut().zip(row) {
                        *d += w * s;
                    }
                }
            }
        }
        (out, in_shape)
    }
}

fn axis_maps(spatial: &[usize], op: Resample, padding: Padding) -> Result<Vec<AxisMap>> {
    match op {
        Resample::Down { factor, .. } | Resample::Up { factor, .. } if factor < 1 => {
            return Err(Error::invalid("resampling factor must be positive"))
        }
        _ => {}
    }
    spatial
        .iter()
        .map(|&n| AxisMap::build(op, n, padding))
        .collect()
}

/// Down- or upsample every spatial axis by the same factor. `padding` only
/// matters for bilinear upsampling: circular wraps, reflect clamps to the edge.
pub fn resample(x: &Tensor, op: Resample, padding: Padding) -> Result<Tensor> {
    let maps = axis_maps(x.spatial(), op, padding)?;
    let mut data = x.data().to_vec();
    let mut shape = x.shape().to_vec();
    for (a, map) in maps.iter().enumerate() {
        (data, shape) = map.apply(&data, &shape, a + 1);
    }
    Tensor::new(shape, data)
}

/// Adjoint of [`resample`] applied to `upstream`; `input_shape` is the shape
/// that was resampled.
pub fn resample_grad(
    input_shape: &[usize],
    op: Resample,
    padding: Padding,
    upstream: &Tensor,
) -> Result<Tensor> {
    let maps = axis_maps(&input_shape[1..], op, padding)?;
    let expected: Vec<usize> = std::iter::once(input_shape[0])
        .chain(maps.iter().map(|m| m.out_len()))
        .collect();
    if upstream.shape() != expected.as_slice() {
        return Err(Error::shape(format!(
            "upstream {:?} does not match resampled shape {expected:?}",
            upstream.shape()
        )));
    }
    let mut data = upstream.data().to_vec();
    let mut shape = upstream.shape().to_vec();
    for (a, map) in maps.iter().enumerate().rev() {
        (data, shape) = map.apply_adjoint(&data, &shape, a + 1);
    }
    Tensor::new(shape, data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeKind {
    Add,
    Concat,
}

pub fn merge(a: &Tensor, b: &Tensor, kind: MergeKind) -> Result<Tensor> {
    match kind {
        MergeKind::Add => {
            a.check_same_shape(b)?;
            let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
            Tensor::new(a.shape().to_vec(), data)
        }
        MergeKind::Concat => {
            if a.spatial() != b.spatial() {
                return Err(Error::shape(format!(
                    "concat needs equal spatial extents, got {:?} and {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
            let mut shape = a.shape().to_vec();
            shape[0] += b.channels();
            let mut data = Vec::with_capacity(a.len() + b.len());
            data.extend_from_slice(a.data());
            data.extend_from_slice(b.data());
            Tensor::new(shape, data)
        }
    }
}

/// Split the merged gradient back onto the two operands; `channels_a` is the
/// channel count of the first operand.
pub fn merge_grad(upstream: &Tensor, kind: MergeKind, channels_a: usize) -> Result<(Tensor, Tensor)> {
    match kind {
        MergeKind::Add => Ok((upstream.clone(), upstream.clone())),
        MergeKind::Concat => {
            let c = upstream.channels();
            if channels_a == 0 || channels_a >= c {
                return Err(Error::shape(format!(
                    "cannot split {c} channels at {channels_a}"
                )));
            }
            let n = upstream.spatial_len();
            let mut sa = upstream.shape().to_vec();
            sa[0] = channels_a;
            let mut sb = upstream.shape().to_vec();
            sb[0] = c - channels_a;
            let (da, db) = upstream.data().split_at(channels_a * n);
            Ok((Tensor::new(sa, da.to_vec())?, Tensor::new(sb, db.to_vec())?))
        }
    }
}
