//! Command-line front end for the spin-bath engines: scenario configs,
//! runners for each experiment, CSV/TOML output and the acceptance suite.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod output;
pub mod runner;
pub mod selftest;
