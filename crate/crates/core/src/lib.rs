//! RamanNet core: a shifted-window dense network for Raman spectrum classification.
//!
//! Each overlapping window of the spectrum is fed to its own dense block (no
//! weight sharing, so the model is deliberately *not* translation equivariant),
//! the block features are concatenated, summarized, projected into an embedding
//! trained with an auxiliary triplet loss, and classified with a softmax head.
//!
//! This crate is `no_std` + `alloc`. Everything touching files, the clock or the
//! command line lives in the `ramannet` companion crate.
//!
//! Layout:
//! - [`numerics`]: dense / batchnorm / dropout / LeakyReLU layers, losses and Adam,
//!   all with hand-written backward passes.
//! - [`model`]: the network itself, window splitting, parameter counting and the
//!   binary checkpoint codec.
//! - [`preprocess`]: common-range cropping, natural cubic spline resampling and
//!   min-max normalization.
//! - [`data`]: labeled datasets, split plans and triplet sampling.
//! - [`train`]: the training loop and the evaluation protocols.
//! - [`metrics`]: confusion matrices, sensitivity/specificity and top-k accuracy.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod data;
mod error;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod preprocess;
pub mod rng;
pub mod train;

pub use error::{CheckpointError, Error, Result};
