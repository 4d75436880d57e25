//! Any-scale super-resolution for single-channel (thermal) imagery.
//!
//! The network has two halves:
//!
//! * [`encoder`] turns a low-resolution image and a scale factor into a
//!   latent feature map of the same spatial size, using scale-conditioned
//!   state-space blocks and a scale-adaptive channel mapping.
//! * [`upsampler`] decodes that latent map at arbitrary query coordinates:
//!   nearest lifting from the four surrounding cells, Gaussian RBF weights
//!   on the coordinate offsets, offset-driven attention, and a small
//!   neural-operator head.
//!
//! Everything runs on a small reverse-mode [`autograd`] engine in `f64` so
//! every gradient can be checked against finite differences
//! ([`gradcheck`]). [`training`] and [`evaluation`] implement the
//! random-scale training protocol and PSNR evaluation.

pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod imaging;
mod init;
pub mod model;
pub mod tensor;
pub mod training;
pub mod upsampler;

pub use autograd::{Graph, ParamStore, Var, BACKWARD_OPS};
pub use error::{Error, Result};
pub use model::AnyTsr;
pub use tensor::Tensor;

/// `x` such that `softplus(x) = y` for `y > 0`.
pub(crate) fn ops_softplus_inverse(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}
