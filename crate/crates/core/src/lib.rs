//! Toroidal autoencoder.
//!
//! The latent space is split into `d` Cartesian pairs `(x_i, y_i)` read in
//! polar form: angles live on a `d`-torus and are spread uniformly by a
//! sorted "spring" loss, squared radii are pulled towards `N(1, 0.1)`
//! quantiles. Morphing walks straight lines on the torus, optionally
//! wrapping around through different faces of `[-pi, pi]^d`.

// `!(x > 0.0)` is used on purpose so NaN lands on the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod diagnostics;
mod error;
pub mod mnist;
pub mod model;
pub mod morphing;
pub mod nn;
pub mod polar;
pub mod regularizers;
pub mod train;

pub use error::{Error, Result};
