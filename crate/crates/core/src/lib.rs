//! Differentiable cell search for unrolled compressed-sensing MR image
//! reconstruction.
//!
//! The crate is organised bottom-up:
//!
//! * [`gradcore`]: dense tensors, a tape-based reverse-mode autodiff graph
//!   with the handful of primitives the reconstruction networks need, and Adam.
//! * [`kspace`]: centered orthonormal FFTs, Cartesian line masks,
//!   zero-filled reconstruction, normalization, and the closed-form
//!   data-consistency operator.
//! * [`data`]: synthetic phantoms, acquisition simulation, search splits and
//!   the `CSMRI1` dataset file format.
//! * [`model`]: candidate operations, the continuous supercell, discrete
//!   cells, baseline modules, the cascaded backbone and FLOPs/parameter
//!   accounting.
//! * [`search`]: first-order bilevel optimization of weights and
//!   architecture logits with genotype-stability early stopping.
//! * [`traineval`]: retraining, image-quality metrics, the TV baseline and
//!   test-set evaluation.

pub mod data;
pub mod error;
pub mod gradcore;
pub mod kspace;
pub mod model;
pub mod search;
pub mod traineval;

pub use error::{Error, Result};
