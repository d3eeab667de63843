//! Residual-learning convolutional sparse coding (RL-CSC) for single-image
//! super-resolution.
//!
//! The network unrolls a convolutional LISTA recursion between a small
//! feature extractor and a residual reconstruction head, and adds the
//! predicted residual back onto the bicubic-interpolated input:
//!
//! ```text
//! y   = relu(F1 * relu(F0 * I_y))
//! z_1 = relu(W1 * y - θ),   z_{k+1} = relu(W1 * y + S * z_k - θ)
//! R   = H * relu(W2 * z_K)
//! I_x = I_y + R
//! ```
//!
//! Modules: [`tensor`] (NCHW arithmetic, convolution, reverse-mode tape),
//! [`sparse`] (ISTA / dense LISTA), [`model`], [`data`], [`trainer`],
//! [`metrics`] and [`gradcheck`].

// Range checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod sparse;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
