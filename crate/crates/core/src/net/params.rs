//! Sampled weights and the frozen network input.

use serde::{Deserialize, Serialize};

use super::spec::{InputKernel, Layer, NetworkSpec};
use crate::error::{Error, Result};
use crate::kernel::gaussian_taps;
use crate::rng::Rng;
use crate::tensor::{gaussian_tensor, Padding, Tensor};

/// Stream of the input draw; weight streams are the layer indices.
const INPUT_STREAM: u64 = 1 << 32;

/// Trainable tensors, one slot per layer: conv filters `out × in × taps...`
/// and bias vectors `[channels]`; other layers hold `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    slots: Vec<Option<Tensor>>,
    pub seed: u64,
}

impl ParamSet {
    pub fn from_slots(slots: Vec<Option<Tensor>>, seed: u64) -> Self {
        ParamSet { slots, seed }
    }

    pub fn slots(&self) -> &[Option<Tensor>] {
        &self.slots
    }

    pub fn layer(&self, i: usize) -> Option<&Tensor> {
        self.slots.get(i).and_then(Option::as_ref)
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.slots.iter().flatten()
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.slots.iter_mut().flatten()
    }

    /// Number of trainable tensors.
    pub fn count(&self) -> usize {
        self.tensors().count()
    }

    /// Number of scalar parameters.
    pub fn len(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn zeros_like(&self) -> Self {
        ParamSet {
            slots: self
                .slots
                .iter()
                .map(|s| s.as_ref().map(|t| Tensor::zeros(t.shape())))
                .collect(),
            seed: self.seed,
        }
    }

    pub fn check_same_layout(&self, other: &ParamSet) -> Result<()> {
        let same = self.slots.len() == other.slots.len()
            && self.slots.iter().zip(&other.slots).all(|(a, b)| match (a, b) {
                (Some(a), Some(b)) => a.shape() == b.shape(),
                (None, None) => true,
                _ => false,
            });
        if same {
            Ok(())
        } else {
            Err(Error::shape("parameter sets have different layouts"))
        }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &ParamSet) -> Result<()> {
        self.check_same_layout(other)?;
        for (a, b) in self.tensors_mut().zip(other.tensors()) {
            a.axpy(alpha, b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        self.tensors_mut().for_each(|t| t.scale(alpha));
    }

    pub fn norm_sq(&self) -> f64 {
        self.tensors().map(Tensor::norm_sq).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(Tensor::is_finite)
    }

    /// All parameters in slot order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.len() {
            return Err(Error::shape(format!(
                "expected {} parameters, got {}",
                self.len(),
                values.len()
            )));
        }
        let mut rest = values;
        for t in self.tensors_mut() {
            let (head, tail) = rest.split_at(t.len());
            t.data_mut().copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }
}

/// The network's input `x`, its frozen flag and the perturbation std `σ_p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkInput {
    pub x: Tensor,
    pub frozen: bool,
    pub sigma_p: f64,
}

impl NetworkInput {
    pub fn new(x: Tensor) -> Self {
        NetworkInput {
            x,
            frozen: true,
            sigma_p: 0.0,
        }
    }

    /// `x + N(0, σ_p²)`; the stored input is left untouched.
    pub fn perturbed(&self, rng: &mut Rng) -> Result<Tensor> {
        if !(self.sigma_p >= 0.0 && self.sigma_p.is_finite()) {
            return Err(Error::invalid(format!("sigma_p must be >= 0, got {}", self.sigma_p)));
        }
        let mut out = self.x.clone();
        if self.sigma_p > 0.0 {
            let noise = gaussian_tensor(rng, out.shape(), self.sigma_p)?;
            out.axpy(1.0, &noise)?;
        }
        Ok(out)
    }
}

/// Fan-in `in × taps^dims` of a conv filter tensor.
fn fan_in(filters_shape: &[usize]) -> usize {
    filters_shape[1..].iter().product()
}

/// Draw weights `N(0, gain / fan_in)` and biases `N(0, σ_b²)` for every layer.
pub fn init_params(spec: &NetworkSpec, seed: u64) -> Result<ParamSet> {
    let acts = spec.activations()?;
    let master = Rng::new(seed, 0);
    let mut slots = Vec::with_capacity(spec.layers.len());
    for (i, layer) in spec.layers.iter().enumerate() {
        let mut rng = master.substream(i as u64);
        let slot = match *layer {
            Layer::Conv {
                out_channels, width, ..
            } => {
                let mut shape = vec![out_channels, acts[i].channels];
                shape.extend(std::iter::repeat_n(width, spec.dims));
                let std = (spec.conv_gain(i) / fan_in(&shape) as f64).sqrt();
                Some(gaussian_tensor(&mut rng, &shape, std)?)
            }
            Layer::Bias { sigma_b } => Some(gaussian_tensor(&mut rng, &[acts[i].channels], sigma_b)?),
            _ => None,
        };
        slots.push(slot);
    }
    Ok(ParamSet { slots, seed })
}

/// Draw an input of the given spatial extent from the spec's input kernel.
/// Filtered inputs are smoothed with circular boundaries so the draw is
/// exactly stationary.
pub fn sample_input(spec: &NetworkSpec, extent: &[usize], rng: &mut Rng) -> Result<Tensor> {
    if extent.len() != spec.dims {
        return Err(Error::shape(format!(
            "{}-d network given a {}-d extent",
            spec.dims,
            extent.len()
        )));
    }
    let mut shape = vec![spec.input.channels];
    shape.extend_from_slice(extent);
    match spec.input.kernel {
        InputKernel::White { sigma } => gaussian_tensor(rng, &shape, sigma),
        InputKernel::GaussianFiltered { sigma, filter_std } => {
            let mut x = gaussian_tensor(rng, &shape, sigma)?;
            let taps = gaussian_taps(filter_std);
            for axis in 0..spec.dims {
                x = filter_axis(&x, &taps, axis + 1, Padding::Circular);
            }
            Ok(x)
        }
    }
}

fn filter_axis(x: &Tensor, taps: &[f64], axis: usize, padding: Padding) -> Tensor {
    let shape = x.shape();
    let n = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let half = (taps.len() / 2) as isize;
    let mut out = Tensor::zeros(shape);
    let src = x.data();
    let dst = out.data_mut();
    for o in 0..outer {
        for t in 0..n {
            for (j, &w) in taps.iter().enumerate() {
                let s = padding.index(t as isize + j as isize - half, n);
                let from = &src[(o * n + s) * inner..][..inner];
                let to = &mut dst[(o * n + t) * inner..][..inner];
                for (d, v) in to.iter_mut().zip(from) {
                    *d += w * v;
                }
            }
        }
    }
    out
}

/// Sample parameters and a frozen input of spatial extent `extent`.
pub fn init(spec: &NetworkSpec, extent: &[usize], seed: u64) -> Result<(ParamSet, NetworkInput)> {
    spec.extents(extent)?;
    let params = init_params(spec, seed)?;
    let mut rng = Rng::new(seed, 0).substream(INPUT_STREAM);
    let x = sample_input(spec, extent, &mut rng)?;
    Ok((params, NetworkInput::new(x)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::presets::{preset, PresetOptions};

    #[test]
    fn same_seed_same_params() {
        let spec = preset("conv_2", &PresetOptions::default()).unwrap();
        let (a, xa) = init(&spec, &[32], 7).unwrap();
        let (b, xb) = init(&spec, &[32], 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(xa, xb);
        let (c, _) = init(&spec, &[32], 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn weight_variance_matches_gain() {
        let opts = PresetOptions {
            channels: 64,
            input_channels: 64,
            ..Default::default()
        };
        let spec = preset("conv_2", &opts).unwrap();
        let p = init_params(&spec, 3).unwrap();
        for (i, t) in p.slots().iter().enumerate() {
            if let Some(t) = t {
                assert!(t.len() >= 4096);
                let want = spec.conv_gain(i) / (64.0 * 3.0);
                let var = t.norm_sq() / t.len() as f64;
                assert!((var / want - 1.0).abs() < 0.1, "layer {i}: {var} vs {want}");
            }
        }
    }

    #[test]
    fn empty_spec_has_no_params() {
        let mut spec = preset("conv_1", &PresetOptions::default()).unwrap();
        spec.layers.clear();
        let (p, _) = init(&spec, &[8], 0).unwrap();
        assert!(p.is_empty());
        assert_eq!(p.count(), 0);
    }

    #[test]
    fn flat_round_trip() {
        let spec = preset("conv_2", &PresetOptions::default()).unwrap();
        let p = init_params(&spec, 1).unwrap();
        let mut q = p.zeros_like();
        q.set_flat(&p.flatten()).unwrap();
        assert_eq!(p, q);
        assert!(q.set_flat(&[1.0]).is_err());
    }

    #[test]
    fn perturbation() {
        let x = Tensor::from_signal(&[1.0, 2.0, 3.0]);
        let mut input = NetworkInput::new(x.clone());
        let mut rng = Rng::new(0, 0);
        assert_eq!(input.perturbed(&mut rng).unwrap(), x);
        input.sigma_p = 0.5;
        let y = input.perturbed(&mut rng).unwrap();
        assert_ne!(y, x);
        assert_eq!(input.x, x);
    }

    #[test]
    fn filtered_input_is_circularly_smoothed() {
        let taps = gaussian_taps(1.0);
        let mut x = Tensor::zeros(&[1, 16]);
        x.data_mut()[0] = 1.0;
        let y = filter_axis(&x, &taps, 1, Padding::Circular);
        let half = taps.len() / 2;
        assert!((y.data().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(y.data()[0], taps[half]);
        assert_eq!(y.data()[15], taps[half + 1]);
    }
}
