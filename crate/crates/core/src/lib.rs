//! Stationary Gaussian-process kernels of random convolutional networks,
//! exact GP inference, and SGD/SGLD training of deep-image-prior networks.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense arrays, seeded RNG streams and the differentiable
//!   primitives (convolution, activations, resampling, merges).
//! - [`kernel`]: stationary covariance functions on integer lag grids and
//!   their layer-by-layer transfer rules, compiled from a [`NetworkSpec`].
//! - [`empirics`]: Monte Carlo estimates of the same covariances from
//!   sampled finite networks.
//! - [`gp`]: exact GP prior sampling, posterior and marginal likelihood.
//! - [`net`]: trainable realisation of a [`NetworkSpec`] with hand-chained
//!   reverse-mode gradients.
//! - [`inference`]: the SGD variants and SGLD, with traces and streaming
//!   posterior statistics.
//! - [`signal`]: netpbm/CSV codecs, corruptions, masks and metrics.
//! - [`experiment`]: the composite experiments driven by the CLI.

pub mod empirics;
pub mod error;
pub mod experiment;
pub mod gp;
pub mod inference;
pub mod kernel;
pub mod linalg;
pub mod net;
pub mod rng;
pub mod signal;
pub mod tensor;

pub use error::{Error, Result};
pub use kernel::StationaryKernel;
pub use net::spec::{InputKernel, Layer, NetworkSpec};
pub use rng::Rng;
pub use tensor::Tensor;
