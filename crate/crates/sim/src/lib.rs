//! Configuration, file formats, and the command line around `hdpfl-core`.
//!
//! The binary has four subcommands: `simulate` runs a configured
//! experiment and writes a metrics bundle, `weights` compares aggregation
//! weights for one round of a bundle, `rpca` decomposes a CSV matrix and
//! `calibrate` prints the noise scale for a privacy target.

pub mod bundle;
pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod simulate;

pub use config::{load_config, parse_config, ExperimentConfig};
pub use error::{HarnessError, Result};
pub use simulate::{simulate, Outcome, Rayon};
