//! Numeric core for CNN-based singing voice acoustic modeling.
//!
//! Everything in this crate is pure computation over in-memory data and
//! builds without `std` (only `alloc` is required). File formats, WAV output
//! and the command-line driver live in the `cnnsvs` companion crate.
//!
//! The pipeline, bottom-up:
//!
//! - [`score`]: musical scores, state alignments and frame-level input features.
//! - [`dynamics`]: delta / delta-delta windows and the banded window matrix.
//! - [`mlpg`]: maximum-likelihood parameter generation over banded systems.
//! - [`nn`]: 1-D convolution kernels with hand-written backward passes.
//! - [`model`]: the FFNN baseline and the FFNN+CNN architectures (frame- and
//!   state-driven).
//! - [`trajloss`]: trajectory likelihood objective and tied covariance.
//! - [`generate`]: segment planning, cross-fading and end-to-end synthesis.
//! - [`train`]: deterministic training loops.
//! - [`corpus`]: a seeded synthetic singing corpus with a known oracle.
//! - [`vocoder`]: vibrato, excitation and MLSA filtering.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod corpus;
pub mod dynamics;
pub mod error;
pub mod generate;
pub mod matrix;
pub mod mlpg;
pub mod model;
pub mod nn;
pub mod score;
pub mod train;
pub mod trajloss;
pub mod vocoder;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use matrix::Matrix;
