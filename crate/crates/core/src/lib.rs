//! Pulsed alkali-noble comagnetometer simulation and signal extraction.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod estimation;
pub mod io;
pub mod model;
pub mod protocol;
pub mod scenarios;

pub use error::{Error, Result};
