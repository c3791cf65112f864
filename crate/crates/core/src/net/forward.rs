//! Forward pass with activation cache, and its hand-chained reverse pass.

use super::params::ParamSet;
use super::spec::{Layer, NetworkSpec};
use crate::error::{Error, Result};
use crate::tensor::{
    activation, activation_grad, conv, conv_grad, merge, merge_grad, resample, resample_grad,
    Padding, Resample, Tensor,
};

/// Every activation of one forward pass; `acts[0]` is the input and
/// `acts[i + 1]` the output of layer `i`.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    acts: Vec<Tensor>,
    padding: Padding,
}

impl ForwardCache {
    pub fn output(&self) -> &Tensor {
        self.acts.last().expect("input activation present")
    }

    pub fn into_output(mut self) -> Tensor {
        self.acts.pop().expect("input activation present")
    }

    pub fn activations(&self) -> &[Tensor] {
        &self.acts
    }
}

fn resample_op(layer: &Layer) -> Option<Resample> {
    match *layer {
        Layer::Down { factor, mode } => Some(Resample::Down { factor, mode }),
        Layer::Up { factor, mode } => Some(Resample::Up { factor, mode }),
        _ => None,
    }
}

fn slot<'a>(params: &'a ParamSet, i: usize) -> Result<&'a Tensor> {
    params
        .layer(i)
        .ok_or_else(|| Error::shape("missing parameters").at_layer(i))
}

fn add_bias(x: &Tensor, b: &Tensor) -> Result<Tensor> {
    if b.len() != x.channels() {
        return Err(Error::shape(format!(
            "bias of length {} for {} channels",
            b.len(),
            x.channels()
        )));
    }
    let mut out = x.clone();
    for (c, &bc) in b.data().iter().enumerate() {
        out.channel_mut(c).iter_mut().for_each(|v| *v += bc);
    }
    Ok(out)
}

/// Run the network with the spec's padding.
pub fn forward(spec: &NetworkSpec, params: &ParamSet, input: &Tensor) -> Result<ForwardCache> {
    forward_with(spec, params, input, spec.padding)
}

pub fn forward_with(
    spec: &NetworkSpec,
    params: &ParamSet,
    input: &Tensor,
    padding: Padding,
) -> Result<ForwardCache> {
    if params.slots().len() != spec.layers.len() {
        return Err(Error::shape(format!(
            "{} parameter slots for {} layers",
            params.slots().len(),
            spec.layers.len()
        )));
    }
    if input.spatial().len() != spec.dims || input.channels() != spec.input.channels {
        return Err(Error::shape(format!(
            "input {:?} does not match a {}-d network with {} input channels",
            input.shape(),
            spec.dims,
            spec.input.channels
        )));
    }
    let mut acts = Vec::with_capacity(spec.layers.len() + 1);
    acts.push(input.clone());
    for (i, layer) in spec.layers.iter().enumerate() {
        let x = &acts[i];
        let y = match *layer {
            Layer::Conv { .. } => conv(x, slot(params, i)?, padding),
            Layer::Act { kind } => Ok(activation(x, kind)),
            Layer::Bias { .. } => add_bias(x, slot(params, i)?),
            Layer::Down { .. } | Layer::Up { .. } => {
                resample(x, resample_op(layer).expect("resampling layer"), padding)
            }
            Layer::Skip { source, kind } => merge(x, &acts[source], kind),
        }
        .map_err(|e| e.at_layer(i))?;
        acts.push(y);
    }
    Ok(ForwardCache { acts, padding })
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) -> Result<()> {
    match slot {
        Some(acc) => acc.axpy(1.0, &g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Gradients of `⟨f(x, θ), upstream⟩` for the cached pass. With `upstream =
/// f(x, θ) − ŷ` these are the gradients of `½‖ŷ − f(x, θ)‖²`.
///
/// The input gradient is computed only when `input_grad` is set; otherwise
/// an all-zero tensor is returned.
pub fn backward(
    spec: &NetworkSpec,
    params: &ParamSet,
    cache: &ForwardCache,
    upstream: &Tensor,
    input_grad: bool,
) -> Result<(ParamSet, Tensor)> {
    let n = spec.layers.len();
    if cache.acts.len() != n + 1 {
        return Err(Error::invalid("forward cache does not belong to this network"));
    }
    if upstream.shape() != cache.output().shape() {
        return Err(Error::shape(format!(
            "upstream gradient {:?} does not match output {:?}",
            upstream.shape(),
            cache.output().shape()
        )));
    }
    let padding = cache.padding;
    let acts = spec.activations()?;
    let mut grads: Vec<Option<Tensor>> = vec![None; n + 1];
    grads[n] = Some(upstream.clone());
    let mut param_grads: Vec<Option<Tensor>> = vec![None; n];
    for i in (0..n).rev() {
        let Some(g) = grads[i + 1].take() else {
            continue;
        };
        let x = &cache.acts[i];
        let layer = &spec.layers[i];
        let need_input = input_grad || i > 0;
        let step = || -> Result<Option<Tensor>> {
            Ok(match *layer {
                Layer::Conv { .. } => {
                    let (gx, gw) = conv_grad(x, slot(params, i)?, &g, padding)?;
                    param_grads[i] = Some(gw);
                    need_input.then_some(gx)
                }
                Layer::Act { kind } => Some(activation_grad(x, kind, &g)?),
                Layer::Bias { .. } => {
                    let gb: Vec<f64> = (0..g.channels()).map(|c| g.channel(c).iter().sum()).collect();
                    param_grads[i] = Some(Tensor::new(vec![gb.len()], gb)?);
                    Some(g)
                }
                Layer::Down { .. } | Layer::Up { .. } => Some(resample_grad(
                    x.shape(),
                    resample_op(layer).expect("resampling layer"),
                    padding,
                    &g,
                )?),
                Layer::Skip { source, kind } => {
                    let (ga, gb) = merge_grad(&g, kind, acts[i].channels)?;
                    accumulate(&mut grads[source], gb)?;
                    Some(ga)
                }
            })
        };
        let gx = step().map_err(|e| e.at_layer(i))?;
        if let Some(gx) = gx {
            accumulate(&mut grads[i], gx).map_err(|e| e.at_layer(i))?;
        }
    }
    let param_grads = params
        .slots()
        .iter()
        .zip(param_grads)
        .map(|(p, g)| match (p, g) {
            (Some(p), None) => Some(Tensor::zeros(p.shape())),
            (_, g) => g,
        })
        .collect();
    let gx = match grads[0].take() {
        Some(g) if input_grad => g,
        _ => Tensor::zeros(cache.acts[0].shape()),
    };
    Ok((ParamSet::from_slots(param_grads, params.seed), gx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::params::init;
    use crate::net::presets::{preset, PresetOptions};
    use crate::rng::Rng;
    use crate::tensor::gaussian_tensor;

    fn small(name: &str, dims: usize) -> NetworkSpec {
        let opts = PresetOptions {
            dims,
            channels: 3,
            input_channels: 2,
            out_channels: Some(1),
            padding: Padding::Reflect,
            ..Default::default()
        };
        preset(name, &opts).unwrap()
    }

    #[test]
    fn deterministic_and_zero_weights() {
        let spec = small("conv_2", 1);
        let (p, x) = init(&spec, &[16], 5).unwrap();
        let a = forward(&spec, &p, &x.x).unwrap();
        let b = forward(&spec, &p, &x.x).unwrap();
        assert_eq!(a.output(), b.output());
        let mut z = p.clone();
        z.scale(0.0);
        let out = forward(&spec, &z, &x.x).unwrap();
        assert!(out.output().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_residual_zero_gradient() {
        let spec = small("unet_small", 1);
        let (p, x) = init(&spec, &[16], 1).unwrap();
        let cache = forward(&spec, &p, &x.x).unwrap();
        let up = Tensor::zeros(cache.output().shape());
        let (g, gx) = backward(&spec, &p, &cache, &up, true).unwrap();
        assert_eq!(g.norm_sq(), 0.0);
        assert_eq!(gx.norm_sq(), 0.0);
    }

    #[test]
    fn frozen_input_gets_zero_gradient() {
        let spec = small("conv_2", 1);
        let (p, x) = init(&spec, &[16], 1).unwrap();
        let cache = forward(&spec, &p, &x.x).unwrap();
        let up = Tensor::filled(cache.output().shape(), 1.0);
        let (_, gx) = backward(&spec, &p, &cache, &up, false).unwrap();
        assert_eq!(gx.norm_sq(), 0.0);
        let (_, gx) = backward(&spec, &p, &cache, &up, true).unwrap();
        assert!(gx.norm_sq() > 0.0);
    }

    #[test]
    fn layer_index_in_errors() {
        let spec = small("ae_1", 1);
        let (p, _) = init(&spec, &[16], 1).unwrap();
        let odd = Tensor::zeros(&[2, 15]);
        match forward(&spec, &p, &odd) {
            Err(Error::Layer { layer: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    fn loss(spec: &NetworkSpec, p: &ParamSet, x: &Tensor, y: &Tensor) -> f64 {
        let f = forward(spec, p, x).unwrap().into_output();
        0.5 * f.data().iter().zip(y.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
    }

    #[test]
    fn finite_differences_on_presets() {
        for (name, dims, n) in [("conv_2", 1, 12), ("ae_1", 1, 12), ("unet_small", 1, 16), ("unet_small", 2, 8)] {
            let mut spec = small(name, dims);
            // smooth activations keep central differences away from kinks
            for l in spec.layers.iter_mut() {
                if let Layer::Act { kind } = l {
                    *kind = crate::tensor::Activation::Erf;
                }
            }
            let extent = vec![n; dims];
            let (p, x) = init(&spec, &extent, 11).unwrap();
            let mut rng = Rng::new(2, 0);
            let out_shape = forward(&spec, &p, &x.x).unwrap().output().shape().to_vec();
            let y = gaussian_tensor(&mut rng, &out_shape, 1.0).unwrap();
            let cache = forward(&spec, &p, &x.x).unwrap();
            let mut resid = cache.output().clone();
            resid.axpy(-1.0, &y).unwrap();
            let (g, gx) = backward(&spec, &p, &cache, &resid, true).unwrap();
            let flat = p.flatten();
            let gflat = g.flatten();
            let h = 1e-5;
            for _ in 0..12 {
                let j = rng.below(flat.len());
                let mut q = p.clone();
                let mut v = flat.clone();
                v[j] += h;
                q.set_flat(&v).unwrap();
                let lp = loss(&spec, &q, &x.x, &y);
                v[j] -= 2.0 * h;
                q.set_flat(&v).unwrap();
                let lm = loss(&spec, &q, &x.x, &y);
                let fd = (lp - lm) / (2.0 * h);
                let err = (fd - gflat[j]).abs() / fd.abs().max(gflat[j].abs()).max(1e-6);
                assert!(err < 1e-4, "{name} {dims}d param {j}: fd {fd} vs {}", gflat[j]);
            }
            let j = rng.below(x.x.len());
            let mut xp = x.x.clone();
            xp.data_mut()[j] += h;
            let lp = loss(&spec, &p, &xp, &y);
            xp.data_mut()[j] -= 2.0 * h;
            let lm = loss(&spec, &p, &xp, &y);
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - gx.data()[j]).abs() <= 1e-4 * fd.abs().max(1e-6), "{name} input");
        }
    }
}
