//! Trainable realisation of a [`NetworkSpec`]: initialisation, forward pass,
//! exact reverse-mode gradients and checkpoints.

mod checkpoint;
mod forward;
mod params;
pub mod presets;
pub mod spec;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use forward::{backward, forward, forward_with, ForwardCache};
pub use params::{init, init_params, sample_input, NetworkInput, ParamSet};
pub use presets::{preset, PresetOptions};
pub use spec::{InputKernel, InputSpec, Layer, NetworkSpec};
