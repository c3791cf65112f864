//! Named architectures.
//!
//! | name | layers |
//! |------|--------|
//! | `conv_<d>` | `d × [Conv, ReLU]` |
//! | `ae_<d>` | `d × [Conv, ReLU, Down 2]` then `d × [Conv, ReLU, Up 2]` |
//! | `unet_small` | two down and two up levels with concatenating skips |
//! | `dip_paper_scaled` | five-level skip autoencoder |
//!
//! `unet_small` and `dip_paper_scaled` end in a 1×1 readout conv when
//! [`PresetOptions::out_channels`] is set. `dip_paper_scaled` uses width-3
//! filters, full-width skips and decimating downsampling.

use serde::{Deserialize, Serialize};

use super::spec::{InputKernel, InputSpec, Layer, NetworkSpec, DEFAULT_HALF_WIDTH};
use crate::error::{Error, Result};
use crate::tensor::{Activation, DownMode, MergeKind, Padding, UpMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PresetOptions {
    pub dims: usize,
    /// Channels per hidden layer.
    pub channels: usize,
    pub input_channels: usize,
    pub input_kernel: InputKernel,
    pub width: usize,
    pub activation: Activation,
    pub out_channels: Option<usize>,
    /// Gain of the readout conv; small values start the network near zero.
    pub readout_gain: Option<f64>,
    pub padding: Padding,
    pub half_width: usize,
    pub up_mode: UpMode,
    pub down_mode: DownMode,
}

impl Default for PresetOptions {
    fn default() -> Self {
        PresetOptions {
            dims: 1,
            channels: 64,
            input_channels: 64,
            input_kernel: InputKernel::White { sigma: 1.0 },
            width: 3,
            activation: Activation::Relu,
            out_channels: None,
            readout_gain: None,
            padding: Padding::Circular,
            half_width: DEFAULT_HALF_WIDTH,
            up_mode: UpMode::Bilinear,
            down_mode: DownMode::Decimate,
        }
    }
}

impl PresetOptions {
    fn conv(&self, out_channels: usize) -> Layer {
        Layer::Conv {
            out_channels,
            width: self.width,
            gain: None,
        }
    }

    fn act(&self) -> Layer {
        Layer::Act {
            kind: self.activation,
        }
    }

    fn down(&self) -> Layer {
        Layer::Down {
            factor: 2,
            mode: self.down_mode,
        }
    }

    fn up(&self) -> Layer {
        Layer::Up {
            factor: 2,
            mode: self.up_mode,
        }
    }

    fn finish(&self, mut layers: Vec<Layer>) -> Result<NetworkSpec> {
        if let Some(out) = self.out_channels {
            layers.push(Layer::Conv {
                out_channels: out,
                width: 1,
                gain: self.readout_gain,
            });
        }
        let spec = NetworkSpec {
            dims: self.dims,
            input: InputSpec {
                channels: self.input_channels,
                kernel: self.input_kernel,
            },
            layers,
            half_width: self.half_width,
            padding: self.padding,
        };
        spec.validate()?;
        Ok(spec)
    }
}

pub const PRESET_NAMES: &[&str] = &["conv_<d>", "ae_<d>", "unet_small", "dip_paper_scaled"];

fn depth_suffix(name: &str, prefix: &str) -> Option<Result<usize>> {
    let rest = name.strip_prefix(prefix)?;
    Some(
        rest.parse::<usize>()
            .ok()
            .filter(|&d| d >= 1)
            .ok_or_else(|| Error::invalid(format!("bad depth in preset name {name:?}"))),
    )
}

pub fn preset(name: &str, opts: &PresetOptions) -> Result<NetworkSpec> {
    if let Some(d) = depth_suffix(name, "conv_") {
        return conv_d(d?, opts);
    }
    if let Some(d) = depth_suffix(name, "ae_") {
        return ae_d(d?, opts);
    }
    match name {
        "unet_small" => unet_small(opts),
        "dip_paper_scaled" => dip_paper_scaled(opts),
        _ => Err(Error::invalid(format!(
            "unknown preset {name:?}; known: {}",
            PRESET_NAMES.join(", ")
        ))),
    }
}

pub fn conv_d(depth: usize, opts: &PresetOptions) -> Result<NetworkSpec> {
    let c = opts.channels;
    let layers = (0..depth).flat_map(|_| [opts.conv(c), opts.act()]).collect();
    opts.finish(layers)
}

pub fn ae_d(depth: usize, opts: &PresetOptions) -> Result<NetworkSpec> {
    let c = opts.channels;
    let mut layers = Vec::new();
    for _ in 0..depth {
        layers.extend([opts.conv(c), opts.act(), opts.down()]);
    }
    for _ in 0..depth {
        layers.extend([opts.conv(c), opts.act(), opts.up()]);
    }
    opts.finish(layers)
}

fn skip_autoencoder(levels: usize, opts: &PresetOptions) -> Result<NetworkSpec> {
    let c = opts.channels;
    let mut layers = Vec::new();
    let mut skips = Vec::new();
    for _ in 0..levels {
        layers.extend([opts.conv(c), opts.act()]);
        // activation index after the act layer
        skips.push(layers.len());
        layers.push(opts.down());
    }
    layers.extend([opts.conv(c), opts.act()]);
    for &source in skips.iter().rev() {
        layers.push(opts.up());
        layers.push(Layer::Skip {
            source,
            kind: MergeKind::Concat,
        });
        layers.extend([opts.conv(c), opts.act()]);
    }
    opts.finish(layers)
}

pub fn unet_small(opts: &PresetOptions) -> Result<NetworkSpec> {
    skip_autoencoder(2, opts)
}

pub fn dip_paper_scaled(opts: &PresetOptions) -> Result<NetworkSpec> {
    skip_autoencoder(5, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_2_layer_counts() {
        let spec = preset("conv_2", &PresetOptions::default()).unwrap();
        assert_eq!(spec.count(|l| matches!(l, Layer::Conv { .. })), 2);
        assert_eq!(spec.count(|l| matches!(l, Layer::Act { .. })), 2);
        assert_eq!(spec.layers.len(), 4);
    }

    #[test]
    fn ae_2_preserves_extent() {
        let spec = preset("ae_2", &PresetOptions::default()).unwrap();
        assert_eq!(spec.output_extent(&[64]).unwrap(), vec![64]);
    }

    #[test]
    fn unet_and_dip_are_valid() {
        let opts = PresetOptions {
            dims: 2,
            out_channels: Some(1),
            ..Default::default()
        };
        let unet = preset("unet_small", &opts).unwrap();
        assert_eq!(unet.output_extent(&[32, 32]).unwrap(), vec![32, 32]);
        assert_eq!(unet.count(|l| matches!(l, Layer::Skip { .. })), 2);
        let dip = preset("dip_paper_scaled", &opts).unwrap();
        assert_eq!(dip.count(|l| matches!(l, Layer::Down { .. })), 5);
        assert_eq!(dip.output_extent(&[64, 64]).unwrap(), vec![64, 64]);
        assert_eq!(dip.activations().unwrap().last().unwrap().channels, 1);
    }

    #[test]
    fn unknown_names() {
        let o = PresetOptions::default();
        assert!(preset("resnet", &o).is_err());
        assert!(preset("conv_x", &o).is_err());
        assert!(preset("conv_0", &o).is_err());
    }
}
