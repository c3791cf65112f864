//! Inputs shared by the benchmarks.

use dipgp::experiment::{corrupt, synthetic_image, DipSetup, ImageKind, Instance};
use dipgp::inference::Task;
use dipgp::net::{init, NetworkInput, ParamSet};
use dipgp::NetworkSpec;

/// The suite network on a `size`×`size` grid with its initial parameters.
pub fn unet(channels: usize, size: usize) -> (NetworkSpec, ParamSet, NetworkInput) {
    let spec = DipSetup::unet(channels).spec(1).expect("valid preset");
    let (params, input) = init(&spec, &[size, size], 0).expect("initialisable");
    (spec, params, input)
}

/// Half-dropped synthetic image.
pub fn inpainting(size: usize) -> Instance {
    let clean = synthetic_image(ImageKind::Shapes, size).expect("valid size");
    corrupt(&clean, Task::Inpaint, 0.0, 0.5, 0).expect("valid corruption")
}
