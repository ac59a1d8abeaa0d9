//! Batch-sequential calibration of stochastic simulators.
//!
//! The crate fits one heteroskedastic Gaussian-process emulator per simulator
//! output, turns the emulators into closed-form moments of the unnormalized
//! posterior, and uses those moments to decide whether the next batch of
//! simulation runs should replicate existing parameters or explore new ones.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod acquisition;
pub mod emulator;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod posterior;
pub mod simulators;

pub use error::{Error, Result};
