//! Self-supervised monocular depth and ego-motion learning.
//!
//! The crate trains a depth network and an ego-motion network from
//! unlabeled image triplets by synthesizing the middle frame from its
//! neighbours and penalizing the appearance difference. Both networks exist
//! in a transformer flavour (patch embedding, self-attention encoder,
//! reassemble/fusion decoder) and a convolutional flavour, so every
//! depth/ego-motion pairing can be trained and compared. The ego-motion
//! network can also predict the camera intrinsics.
//!
//! Module map:
//!
//! - [`ndiff`]: reverse-mode autodiff substrate used by everything else
//! - [`geometry`]: pinhole camera, SE(3) poses, differentiable warping
//! - [`losses`]: SSIM/L1 photometric error, auto-masking, smoothness
//! - [`nets`]: depth/ego-motion networks, intrinsics branch, checkpoints
//! - [`train`]: Adam/AdamW, learning-rate schedule, training loop
//! - [`eval`]: depth metrics with median scaling
//! - [`robust`]: image corruptions, PGD and flip attacks, sweeps
//! - [`pipeline`]: datasets, synthetic scenes, config, image I/O, CLI
//!
//! See the crate's `examples/` directory for one runnable program per
//! capability.

pub mod error;
pub mod eval;
pub mod geometry;
pub mod losses;
pub mod ndiff;
pub mod nets;
pub mod pipeline;
pub mod robust;
pub mod train;

pub use error::{Error, Result};
pub use ndiff::{Array, Graph, Tensor};
