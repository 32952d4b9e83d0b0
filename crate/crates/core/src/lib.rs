//! Recovering image representations from corrupted inputs.
//!
//! A frozen teacher encoder produces unit-norm embeddings of clean images; a
//! student encoder is trained to reproduce those embeddings when it only sees
//! corrupted versions of the same images (masking, additive noise, blur). The
//! student is trained with a contrastive objective that decomposes into an
//! alignment (pull) term and a uniformity (push) term, and the recovery
//! guarantees of that objective are checked numerically in [`theory`].
//!
//! Crate layout:
//! - [`numerics`]: dense tensors, reverse-mode autodiff, Adam, seeded RNG
//! - [`corruptions`]: the forward operators applied to image batches
//! - [`encoders`]: small convolutional / MLP encoders and linear heads
//! - [`losses`]: the contrastive loss family and its gradient diagnostics
//! - [`theory`]: sphere-constrained recovery checks for the loss minimizers
//! - [`training`]: teacher, student, probe, and baseline training loops
//! - [`evaluation`]: multi-instantiation metrics, sweeps, transfer protocols
//! - [`io`]: datasets (IDX + synthetic), checkpoints, experiment configs
//! - [`cli`]: the `rinv` command-line surface

pub mod cli;
pub mod corruptions;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod losses;
pub mod numerics;
pub mod theory;
pub mod training;

pub use error::{Error, Result};
