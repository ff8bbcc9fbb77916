//! Reverse-mode autodiff and single-pass GAN training.
//!
//! FusedProp trains discriminator and generator from one forward and one
//! backward pass by rescaling, per sample, the discriminator-loss gradient
//! that reaches the generator output. InvFusedProp does the reverse:
//! it backpropagates the generator loss and pre-scales the discriminator's
//! parameter gradients inside each layer. Both reproduce simultaneous
//! gradient descent exactly.

// NaN must fail these checks, so `!(x > 0.0)` is deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autograd;
pub mod bench;
pub mod error;
pub mod losses;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use rng::{sample_normal, Rng};
pub use tensor::{DType, Scalar, Tensor};

/// Artifact version embedded in every output file.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
