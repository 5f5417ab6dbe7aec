//! Loss-guided Gaussian attention for RoI classification heads.
//!
//! The crate is organized bottom-up:
//!
//! - [`numerics`]: dense `f64` tensors, a reverse-mode tape, and a
//!   finite-difference gradient checker.
//! - [`model`]: Gaussian parameter prediction, mask rendering, masking,
//!   fusion, the three heads and the combined loss.
//! - [`data`]: a seeded synthetic "camouflage" RoI benchmark and its
//!   binary file format.
//! - [`training`]: Adam, the training and evaluation loops, and the paired
//!   attention-vs-baseline ablation.
//! - [`gradsuite`]: finite-difference checks of every op and of the full loss.
//!
//! Per-instance work (dataset generation, batch gradients, evaluation) goes
//! through [`parallel`], which uses rayon when the `parallel` feature is on
//! and a plain loop otherwise. Reductions are always index-ordered, so both
//! paths produce bit-identical results.

pub mod data;
pub mod gradsuite;
pub mod model;
pub mod numerics;
pub mod parallel;
pub mod rng;
pub mod training;

mod binio;

pub use binio::FormatError;
pub use numerics::{NodeId, NumericsError, Op, OpKind, Tape, Tensor};
