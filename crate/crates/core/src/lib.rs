//! Algorithms for heterogeneous differentially-private federated learning.
//!
//! The crate is `no_std` (it needs `alloc`) and contains no IO. It provides:
//!
//! * [`rpca`]: low-rank plus sparse decomposition by principal component
//!   pursuit, and the per-client noise-energy estimate built on it;
//! * [`accountant`]: noise-scale calibration and per-client privacy ledgers;
//! * [`dp_local`]: client-side DPSGD and the analytic update-variance formulas;
//! * [`models_data`]: toy models with per-sample gradients, synthetic data,
//!   federated splits and privacy-parameter samplers;
//! * [`federation`]: aggregation strategies and the round loop.
//!
//! File formats, configuration and the command line live in the `hdpfl` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod accountant;
pub mod dp_local;
mod error;
pub mod federation;
pub mod matrix;
pub mod models_data;
pub mod rng;
pub mod rpca;

pub use error::{Error, Result};
pub use matrix::DenseMatrix;
