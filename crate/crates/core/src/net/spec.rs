//! Declarative network descriptions shared by the kernel compiler, the Monte
//! Carlo validator and the trainable runtime.
//!
//! Activations are numbered from the network input: activation `0` is the
//! input, activation `i + 1` is the output of layer `i`. A
//! [`Layer::Skip`] at layer `i` merges activation `i` with an earlier
//! activation `source`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Activation, DownMode, MergeKind, Padding, UpMode};

pub const DEFAULT_HALF_WIDTH: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    /// Convolution with `out_channels` filters of odd width `width`. Weights
    /// are drawn `N(0, gain / fan_in)`; `gain` defaults to 2 for a layer
    /// feeding a ReLU and 1 otherwise.
    Conv {
        out_channels: usize,
        width: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gain: Option<f64>,
    },
    Act {
        kind: Activation,
    },
    Down {
        factor: usize,
        mode: DownMode,
    },
    Up {
        factor: usize,
        mode: UpMode,
    },
    /// Per-channel bias drawn `N(0, sigma_b²)`.
    Bias {
        sigma_b: f64,
    },
    Skip {
        source: usize,
        kind: MergeKind,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InputKernel {
    /// I.i.d. `N(0, sigma²)` per channel and position.
    White { sigma: f64 },
    /// White noise of std `sigma` filtered by a normalised discrete Gaussian
    /// of standard deviation `filter_std` (in samples).
    GaussianFiltered { sigma: f64, filter_std: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    pub channels: usize,
    pub kernel: InputKernel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Number of spatial axes, 1 or 2.
    pub dims: usize,
    pub input: InputSpec,
    pub layers: Vec<Layer>,
    /// Lag-grid half width used when compiling the kernel.
    #[serde(default = "default_half_width")]
    pub half_width: usize,
    /// Boundary handling of the runtime network.
    #[serde(default)]
    pub padding: Padding,
}

fn default_half_width() -> usize {
    DEFAULT_HALF_WIDTH
}

/// Channel count and spatial scale of one activation. The scale is the
/// rational `up / down` relative to the network input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ActivationInfo {
    pub channels: usize,
    pub up: usize,
    pub down: usize,
}

impl ActivationInfo {
    fn same_scale(&self, other: &ActivationInfo) -> bool {
        self.up * other.down == other.up * self.down
    }
}

impl NetworkSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: NetworkSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serialises")
    }

    /// Checks the structural invariants and returns per-activation channel
    /// counts and scales (`layers.len() + 1` entries).
    pub fn activations(&self) -> Result<Vec<ActivationInfo>> {
        if !(1..=2).contains(&self.dims) {
            return Err(Error::invalid(format!("dims must be 1 or 2, got {}", self.dims)));
        }
        if self.input.channels == 0 {
            return Err(Error::invalid("input must have at least one channel"));
        }
        match self.input.kernel {
            InputKernel::White { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                return Err(Error::invalid(format!("input sigma must be >= 0, got {sigma}")))
            }
            InputKernel::GaussianFiltered { sigma, filter_std }
                if !(sigma >= 0.0 && sigma.is_finite() && filter_std > 0.0 && filter_std.is_finite()) =>
            {
                return Err(Error::invalid(format!(
                    "gaussian-filtered input needs sigma >= 0 and filter_std > 0, got {sigma}, {filter_std}"
                )))
            }
            _ => {}
        }
        let mut acts = vec![ActivationInfo {
            channels: self.input.channels,
            up: 1,
            down: 1,
        }];
        for (i, layer) in self.layers.iter().enumerate() {
            let cur = acts[i];
            let next = match *layer {
                Layer::Conv {
                    out_channels,
                    width,
                    gain,
                } => {
                    if out_channels == 0 {
                        return Err(Error::invalid("conv needs at least one output channel").at_layer(i));
                    }
                    if width % 2 == 0 {
                        return Err(Error::invalid(format!("conv width must be odd, got {width}")).at_layer(i));
                    }
                    if let Some(g) = gain {
                        if !(g > 0.0 && g.is_finite()) {
                            return Err(Error::invalid(format!("conv gain must be > 0, got {g}")).at_layer(i));
                        }
                    }
                    ActivationInfo {
                        channels: out_channels,
                        ..cur
                    }
                }
                Layer::Act { .. } => cur,
                Layer::Down { factor, .. } => {
                    check_factor(factor, i)?;
                    ActivationInfo {
                        down: cur.down * factor,
                        ..cur
                    }
                }
                Layer::Up { factor, .. } => {
                    check_factor(factor, i)?;
                    ActivationInfo {
                        up: cur.up * factor,
                        ..cur
                    }
                }
                Layer::Bias { sigma_b } => {
                    if !(sigma_b >= 0.0 && sigma_b.is_finite()) {
                        return Err(Error::invalid(format!("sigma_b must be >= 0, got {sigma_b}")).at_layer(i));
                    }
                    cur
                }
                Layer::Skip { source, kind } => {
                    if source >= i {
                        return Err(Error::invalid(format!(
                            "skip source activation {source} does not precede layer {i}"
                        ))
                        .at_layer(i));
                    }
                    let src = acts[source];
                    if !src.same_scale(&cur) {
                        return Err(Error::shape(format!(
                            "skip merges scale {}/{} with source scale {}/{}",
                            cur.up, cur.down, src.up, src.down
                        ))
                        .at_layer(i));
                    }
                    let channels = match kind {
                        MergeKind::Add => {
                            if src.channels != cur.channels {
                                return Err(Error::shape(format!(
                                    "add skip merges {} and {} channels",
                                    cur.channels, src.channels
                                ))
                                .at_layer(i));
                            }
                            cur.channels
                        }
                        MergeKind::Concat => cur.channels + src.channels,
                    };
                    ActivationInfo { channels, ..cur }
                }
            };
            acts.push(next);
        }
        Ok(acts)
    }

    pub fn validate(&self) -> Result<()> {
        self.activations().map(|_| ())
    }

    /// Effective variance gain of conv layer `index`: explicit value, else 2
    /// when the next activation function (before another conv) is a ReLU, else 1.
    pub fn conv_gain(&self, index: usize) -> f64 {
        if let Some(Layer::Conv { gain: Some(g), .. }) = self.layers.get(index) {
            return *g;
        }
        for layer in &self.layers[index + 1..] {
            match layer {
                Layer::Act {
                    kind: Activation::Relu,
                } => return 2.0,
                Layer::Act { .. } | Layer::Conv { .. } => return 1.0,
                _ => {}
            }
        }
        1.0
    }

    /// Spatial extents of every activation for a given input extent,
    /// failing where a downsampling step meets an indivisible extent.
    pub fn extents(&self, input: &[usize]) -> Result<Vec<Vec<usize>>> {
        self.validate()?;
        if input.len() != self.dims {
            return Err(Error::shape(format!(
                "{}-d network given a {}-d extent",
                self.dims,
                input.len()
            )));
        }
        let mut out = vec![input.to_vec()];
        for (i, layer) in self.layers.iter().enumerate() {
            let cur = &out[i];
            let next = match *layer {
                Layer::Down { factor, .. } => {
                    if let Some(&n) = cur.iter().find(|&&n| n % factor != 0) {
                        return Err(Error::shape(format!(
                            "extent {n} is not divisible by downsampling factor {factor}"
                        ))
                        .at_layer(i));
                    }
                    cur.iter().map(|n| n / factor).collect()
                }
                Layer::Up { factor, .. } => cur.iter().map(|n| n * factor).collect(),
                _ => cur.clone(),
            };
            out.push(next);
        }
        Ok(out)
    }

    pub fn output_extent(&self, input: &[usize]) -> Result<Vec<usize>> {
        Ok(self.extents(input)?.pop().expect("input extent present"))
    }

    pub fn count(&self, pred: impl Fn(&Layer) -> bool) -> usize {
        self.layers.iter().filter(|l| pred(l)).count()
    }
}

fn check_factor(factor: usize, layer: usize) -> Result<()> {
    if factor < 2 {
        return Err(Error::invalid(format!("resampling factor must be >= 2, got {factor}")).at_layer(layer));
    }
    Ok(())
}
