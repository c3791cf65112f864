//! Argument groups shared by several subcommands.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use dipgp::net::{preset, PresetOptions};
use dipgp::signal::{read_image, ImageBuffer, Mask};
use dipgp::tensor::{Activation, DownMode, Padding, UpMode};
use dipgp::{InputKernel, NetworkSpec};

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum InputArg {
    White,
    Gaussian,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ActivationArg {
    Relu,
    Erf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PaddingArg {
    Circular,
    Reflect,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum UpArg {
    Nearest,
    Bilinear,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum DownArg {
    Decimate,
    Avgpool,
}

/// Architecture selection: a spec file, or a preset and its options. Unset
/// options fall back to the defaults of the calling command.
#[derive(Args, Clone, Debug, Default)]
pub struct ArchArgs {
    /// NetworkSpec JSON file; overrides --preset and its options.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// conv_<d>, ae_<d>, unet_small or dip_paper_scaled.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub dims: Option<usize>,
    /// Hidden channels per layer.
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub input_channels: Option<usize>,
    #[arg(long, value_enum)]
    pub input: Option<InputArg>,
    /// Std of the white input noise.
    #[arg(long)]
    pub input_sigma: Option<f64>,
    /// Gaussian filter std in samples, for --input gaussian.
    #[arg(long)]
    pub filter_std: Option<f64>,
    /// Filter width (odd).
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long, value_enum)]
    pub activation: Option<ActivationArg>,
    /// Append a 1×1 readout conv with this many channels.
    #[arg(long)]
    pub out_channels: Option<usize>,
    #[arg(long)]
    pub readout_gain: Option<f64>,
    #[arg(long, value_enum)]
    pub padding: Option<PaddingArg>,
    /// Lag-grid half width of the compiled kernel.
    #[arg(long)]
    pub half_width: Option<usize>,
    #[arg(long, value_enum)]
    pub up_mode: Option<UpArg>,
    #[arg(long, value_enum)]
    pub down_mode: Option<DownArg>,
}

impl ArchArgs {
    /// Preset name and options after applying the flags over `base`.
    pub fn options(&self, default_preset: &str, base: PresetOptions) -> (String, PresetOptions) {
        let mut o = base;
        if let Some(d) = self.dims {
            o.dims = d;
        }
        if let Some(c) = self.channels {
            if o.input_channels == o.channels && self.input_channels.is_none() {
                o.input_channels = c;
            }
            o.channels = c;
        }
        if let Some(c) = self.input_channels {
            o.input_channels = c;
        }
        let sigma = self.input_sigma.unwrap_or(match o.input_kernel {
            InputKernel::White { sigma } | InputKernel::GaussianFiltered { sigma, .. } => sigma,
        });
        let filter_std = self.filter_std.unwrap_or(match o.input_kernel {
            InputKernel::GaussianFiltered { filter_std, .. } => filter_std,
            InputKernel::White { .. } => 2.0,
        });
        let gaussian = match self.input {
            Some(InputArg::Gaussian) => true,
            Some(InputArg::White) => false,
            None => matches!(o.input_kernel, InputKernel::GaussianFiltered { .. }) || self.filter_std.is_some(),
        };
        o.input_kernel = if gaussian {
            InputKernel::GaussianFiltered { sigma, filter_std }
        } else {
            InputKernel::White { sigma }
        };
        if let Some(w) = self.width {
            o.width = w;
        }
        if let Some(a) = self.activation {
            o.activation = match a {
                ActivationArg::Relu => Activation::Relu,
                ActivationArg::Erf => Activation::Erf,
            };
        }
        if self.out_channels.is_some() {
            o.out_channels = self.out_channels;
        }
        if self.readout_gain.is_some() {
            o.readout_gain = self.readout_gain;
        }
        if let Some(p) = self.padding {
            o.padding = match p {
                PaddingArg::Circular => Padding::Circular,
                PaddingArg::Reflect => Padding::Reflect,
            };
        }
        if let Some(h) = self.half_width {
            o.half_width = h;
        }
        if let Some(u) = self.up_mode {
            o.up_mode = match u {
                UpArg::Nearest => UpMode::Nearest,
                UpArg::Bilinear => UpMode::Bilinear,
            };
        }
        if let Some(d) = self.down_mode {
            o.down_mode = match d {
                DownArg::Decimate => DownMode::Decimate,
                DownArg::Avgpool => DownMode::Avgpool,
            };
        }
        (self.preset.clone().unwrap_or_else(|| default_preset.to_string()), o)
    }

    pub fn build(&self, default_preset: &str, base: PresetOptions) -> Result<NetworkSpec> {
        if let Some(path) = &self.spec {
            let text = read_text(path)?;
            let mut spec = NetworkSpec::from_json(&text).with_context(|| format!("reading spec {}", path.display()))?;
            if let Some(h) = self.half_width {
                spec.half_width = h;
            }
            return Ok(spec);
        }
        let (name, opts) = self.options(default_preset, base);
        Ok(preset(&name, &opts)?)
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn load_image(path: &Path) -> Result<ImageBuffer> {
    read_image(path).with_context(|| format!("reading image {}", path.display()))
}

/// A mask image: nonzero pixels are observed.
pub fn load_mask(path: &Path, height: usize, width: usize) -> Result<Mask> {
    let img = load_image(path)?;
    let mask = Mask::from_image(&img)?;
    if (mask.height, mask.width) != (height, width) {
        bail!(
            "mask {} is {}×{}, image is {height}×{width}",
            path.display(),
            mask.height,
            mask.width
        );
    }
    Ok(mask)
}

pub fn parse_list<T: std::str::FromStr>(text: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    text.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| anyhow::anyhow!("bad list entry {s:?}: {e}")))
        .collect()
}

/// Seeds `0..n` offset by `base`.
pub fn seed_range(base: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| base + i).collect()
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
pub enum SigmaUnits {
    /// Fraction of the [0, 1] intensity range.
    Unit,
    /// Levels on the 0..255 scale.
    #[value(name = "255")]
    Levels,
}

impl SigmaUnits {
    pub fn to_unit(self, sigma: f64) -> f64 {
        match self {
            SigmaUnits::Unit => sigma,
            SigmaUnits::Levels => sigma / 255.0,
        }
    }
}

/// Output directory: the flag, else `$DIPGP_OUT`, else `./dipgp-out`.
pub fn out_dir(flag: &Option<PathBuf>) -> Result<PathBuf> {
    let dir = flag
        .clone()
        .or_else(|| std::env::var_os("DIPGP_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("dipgp-out"));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}
