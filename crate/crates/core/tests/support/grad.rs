//! Finite-difference and adjointness probes of every differentiable piece.

use dipgp::net::{backward, forward, init, preset, ParamSet, PresetOptions};
use dipgp::tensor::{
    activation, activation_grad, conv, conv_grad, gaussian_tensor, merge, merge_grad, resample, resample_grad,
    Activation, DownMode, MergeKind, Padding, Resample, UpMode,
};
use dipgp::{Layer, NetworkSpec, Rng, Tensor};

pub const H: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;
pub const ADJ_TOL: f64 = 1e-10;

/// Worst errors of one operator configuration. `adj` is relative to
/// `max(|⟨Ax, y⟩|, 1)` and zero where no adjoint probe applies.
#[derive(Clone, Debug)]
pub struct Probe {
    pub label: String,
    pub fd: f64,
    pub adj: f64,
}

impl Probe {
    pub fn ok(&self) -> bool {
        self.fd <= FD_TOL && self.adj <= ADJ_TOL
    }
}

pub fn randn(rng: &mut Rng, shape: &[usize]) -> Tensor {
    gaussian_tensor(rng, shape, 1.0).unwrap()
}

pub fn rel_err(fd: f64, an: f64) -> f64 {
    (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6)
}

fn adj_err(lhs: f64, rhs: f64) -> f64 {
    (lhs - rhs).abs() / lhs.abs().max(1.0)
}

/// Central differences of `loss` at `probes` coordinates of `x` against
/// `grad`; returns the worst relative error.
pub fn fd_check(x: &Tensor, grad: &Tensor, probes: usize, rng: &mut Rng, loss: impl Fn(&Tensor) -> f64) -> f64 {
    let mut worst = 0.0f64;
    for _ in 0..probes {
        let j = rng.below(x.len());
        let mut xp = x.clone();
        xp.data_mut()[j] += H;
        let lp = loss(&xp);
        xp.data_mut()[j] -= 2.0 * H;
        let lm = loss(&xp);
        worst = worst.max(rel_err((lp - lm) / (2.0 * H), grad.data()[j]));
    }
    worst
}

pub fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.dot(b).unwrap()
}

/// Entries pushed at least `margin` away from zero, for kinked functions.
fn away_from_zero(mut t: Tensor, margin: f64) -> Tensor {
    t.data_mut().iter_mut().for_each(|v| {
        if v.abs() < margin {
            *v = if *v < 0.0 { -margin } else { margin };
        }
    });
    t
}

fn shapes() -> Vec<(Vec<usize>, usize)> {
    vec![(vec![3, 16], 3), (vec![2, 9], 5), (vec![2, 6, 8], 3), (vec![1, 5, 5], 1)]
}

pub fn resample_ops() -> Vec<Resample> {
    let mut ops = Vec::new();
    for factor in [2, 4] {
        ops.push(Resample::Down { factor, mode: DownMode::Decimate });
        ops.push(Resample::Down { factor, mode: DownMode::Avgpool });
        ops.push(Resample::Up { factor, mode: UpMode::Nearest });
        ops.push(Resample::Up { factor, mode: UpMode::Bilinear });
    }
    ops
}

/// Both pullbacks of the bilinear conv, by differences and by adjointness.
pub fn conv_probes(seed: u64) -> Vec<Probe> {
    let mut rng = Rng::new(seed, 0);
    let mut out = Vec::new();
    for padding in [Padding::Circular, Padding::Reflect] {
        for (shape, width) in shapes() {
            let dims = shape.len() - 1;
            let mut fshape = vec![4, shape[0]];
            fshape.extend(std::iter::repeat_n(width, dims));
            let x = randn(&mut rng, &shape);
            let f = randn(&mut rng, &fshape);
            let y = conv(&x, &f, padding).unwrap();
            let w = randn(&mut rng, y.shape());
            let (gx, gf) = conv_grad(&x, &f, &w, padding).unwrap();
            let ex = fd_check(&x, &gx, 20, &mut rng, |xp| dot(&conv(xp, &f, padding).unwrap(), &w));
            let ef = fd_check(&f, &gf, 20, &mut rng, |fp| dot(&conv(&x, fp, padding).unwrap(), &w));
            let lhs = dot(&y, &w);
            out.push(Probe {
                label: format!("conv {shape:?} w{width} {padding:?}"),
                fd: ex.max(ef),
                adj: adj_err(lhs, dot(&x, &gx)).max(adj_err(lhs, dot(&f, &gf))),
            });
        }
    }
    out
}

pub fn activation_probes(seed: u64) -> Vec<Probe> {
    let mut rng = Rng::new(seed, 0);
    [Activation::Erf, Activation::Relu]
        .into_iter()
        .map(|kind| {
            let x = away_from_zero(randn(&mut rng, &[3, 20]), 1e-3);
            let w = randn(&mut rng, x.shape());
            let g = activation_grad(&x, kind, &w).unwrap();
            Probe {
                label: format!("activation {kind:?}"),
                fd: fd_check(&x, &g, 40, &mut rng, |xp| dot(&activation(xp, kind), &w)),
                adj: 0.0,
            }
        })
        .collect()
}

pub fn resample_probes(seed: u64) -> Vec<Probe> {
    let mut rng = Rng::new(seed, 0);
    let mut out = Vec::new();
    for padding in [Padding::Circular, Padding::Reflect] {
        for shape in [vec![2, 16], vec![2, 8, 12]] {
            for op in resample_ops() {
                let x = randn(&mut rng, &shape);
                let y = randn(&mut rng, resample(&x, op, padding).unwrap().shape());
                let g = resample_grad(&shape, op, padding, &y).unwrap();
                let lhs = dot(&resample(&x, op, padding).unwrap(), &y);
                out.push(Probe {
                    label: format!("resample {op:?} {shape:?} {padding:?}"),
                    fd: fd_check(&x, &g, 10, &mut rng, |xp| dot(&resample(xp, op, padding).unwrap(), &y)),
                    adj: adj_err(lhs, dot(&x, &g)),
                });
            }
        }
    }
    out
}

pub fn merge_probes(seed: u64) -> Vec<Probe> {
    let mut rng = Rng::new(seed, 0);
    [MergeKind::Add, MergeKind::Concat]
        .into_iter()
        .map(|kind| {
            let a = randn(&mut rng, &[3, 4, 5]);
            let b = randn(&mut rng, if kind == MergeKind::Add { &[3, 4, 5] } else { &[2, 4, 5] });
            let y = randn(&mut rng, merge(&a, &b, kind).unwrap().shape());
            let (ga, gb) = merge_grad(&y, kind, a.channels()).unwrap();
            let lhs = dot(&merge(&a, &b, kind).unwrap(), &y);
            let ea = fd_check(&a, &ga, 10, &mut rng, |ap| dot(&merge(ap, &b, kind).unwrap(), &y));
            let eb = fd_check(&b, &gb, 10, &mut rng, |bp| dot(&merge(&a, bp, kind).unwrap(), &y));
            Probe {
                label: format!("merge {kind:?}"),
                fd: ea.max(eb),
                adj: adj_err(lhs, dot(&a, &ga) + dot(&b, &gb)),
            }
        })
        .collect()
}

fn half_sq_loss(spec: &NetworkSpec, p: &ParamSet, x: &Tensor, y: &Tensor) -> f64 {
    let f = forward(spec, p, x).unwrap().into_output();
    0.5 * f.data().iter().zip(y.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
}

/// Parameter and input gradients of a squared loss through whole presets.
pub fn preset_probes(seed: u64) -> Vec<Probe> {
    let cases: [(&str, usize, usize); 7] = [
        ("conv_3", 1, 12),
        ("ae_2", 1, 16),
        ("ae_1", 2, 8),
        ("unet_small", 1, 16),
        ("unet_small", 2, 8),
        ("dip_paper_scaled", 1, 32),
        ("dip_paper_scaled", 2, 32),
    ];
    let mut out = Vec::new();
    for (name, dims, n) in cases {
        for padding in [Padding::Reflect, Padding::Circular] {
            let opts = PresetOptions {
                dims,
                channels: 3,
                input_channels: 2,
                out_channels: Some(2),
                padding,
                activation: Activation::Erf,
                ..Default::default()
            };
            let mut spec = preset(name, &opts).unwrap();
            // a bias after the first activation exercises that layer too
            if let Some(i) = spec.layers.iter().position(|l| matches!(l, Layer::Act { .. })) {
                if !spec.layers.iter().any(|l| matches!(l, Layer::Skip { .. })) {
                    spec.layers.insert(i + 1, Layer::Bias { sigma_b: 0.5 });
                }
            }
            let (p, input) = init(&spec, &vec![n; dims], 7).unwrap();
            let mut rng = Rng::new(seed, 0);
            let cache = forward(&spec, &p, &input.x).unwrap();
            let y = randn(&mut rng, cache.output().shape());
            let mut resid = cache.output().clone();
            resid.axpy(-1.0, &y).unwrap();
            let (g, gx) = backward(&spec, &p, &cache, &resid, true).unwrap();
            let flat = p.flatten();
            let gflat = g.flatten();
            let mut worst = 0.0f64;
            for _ in 0..16 {
                let j = rng.below(flat.len());
                let mut q = p.clone();
                let mut v = flat.clone();
                v[j] += H;
                q.set_flat(&v).unwrap();
                let lp = half_sq_loss(&spec, &q, &input.x, &y);
                v[j] -= 2.0 * H;
                q.set_flat(&v).unwrap();
                let lm = half_sq_loss(&spec, &q, &input.x, &y);
                worst = worst.max(rel_err((lp - lm) / (2.0 * H), gflat[j]));
            }
            let ex = fd_check(&input.x, &gx, 6, &mut rng, |xp| half_sq_loss(&spec, &p, xp, &y));
            out.push(Probe {
                label: format!("{name} {dims}d {padding:?}"),
                fd: worst.max(ex),
                adj: 0.0,
            });
        }
    }
    out
}

pub fn all_probes(seed: u64) -> Vec<Probe> {
    let mut out = conv_probes(seed);
    out.extend(activation_probes(seed + 1));
    out.extend(resample_probes(seed + 2));
    out.extend(merge_probes(seed + 3));
    out.extend(preset_probes(seed + 4));
    out
}
