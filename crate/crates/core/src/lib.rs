//! Multimodal manipulation failure detection from RGB, depth and audio.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`] and [`autodiff`]: a small deterministic tensor engine with
//!   reverse-mode differentiation.
//! - [`audio`]: WAV input and the MFCC front end.
//! - [`vision`]: episode ingestion, occlusion filtering, phase segmentation,
//!   frame sampling, cropping and augmentation.
//! - [`model`]: the conv / convLSTM vision branch, the audio conv branch and
//!   the late-fusion head, plus checkpoints.
//! - [`train`]: splitting, class weighting, Adam, early stopping, metrics and
//!   partial-observation inference.
//! - [`synth`]: seeded synthetic episodes for desk-scale verification.

// `!(x > 0.0)` is the NaN-rejecting form of a positivity check, and the
// numeric kernels index several buffers in lockstep.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod audio;
pub mod autodiff;
pub mod error;
pub mod model;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod vision;

pub use error::{FinoError, Result};
