//! Adaptive robust-loss learning under noisy labels.
//!
//! - [`losses`]: CE, GCE, SL, Bi-Tempered and PolySoft with value, logit and
//!   hyperparameter gradients
//! - [`model`]: a small fully connected classifier with exact backprop
//! - [`meta`]: the one-step-lookahead loop that learns loss hyperparameters on a
//!   clean meta set while training the classifier on noisy data
//! - [`data`]: synthetic blobs, label-noise injection, splits and CSV I/O
//! - [`theory`]: grid-exact verification of the bounded-loss risk sandwiches
//! - [`cli`]: experiment runner, ablation harness and figure-data emitters

// NaN-rejecting `!(x > 0.0)` checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
pub mod error;
pub mod losses;
pub mod meta;
pub mod model;
pub mod numfmt;
pub mod theory;

pub use error::{ArlError, Result};
