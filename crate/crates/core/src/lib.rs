//! Fronthaul-constrained uplink reception for cell-free XL-MIMO.
//!
//! Each AP reduces its M-antenna signal with an N×M transform W_i and
//! forwards a Gaussian-compressed version with quantization noise
//! covariance Ω_i over a link of capacity C_F. [`afp::run_afp`] maximizes
//! the sum-rate over all (W_i, Ω_i); [`baselines`] holds the local-CSI
//! references, [`decentral`] runs the optimizer as AP/CPU message passing
//! and [`harness`] drives seeded Monte Carlo experiments.

// `!(x > 0.0)` is used on purpose so NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod afp;
pub mod baselines;
pub mod decentral;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod scenario;
pub mod sigmodel;

pub use error::{Error, Result};
