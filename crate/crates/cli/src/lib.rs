//! Command-line front end for the cap-and-trade HJB solver.
//!
//! `solve` writes the value, policy, benchmark, correction and mask fields;
//! `sweep` repeats the solve over `(gamma, alpha)` pairs; `verify` checks a
//! fresh solve against the Monte Carlo oracle.

pub mod commands;
pub mod config;

pub use commands::{load_config, run_solve, run_sweep, run_verify, CliError};
pub use config::{ConfigError, RunConfig};
