//! Two-scale rescaled Lorenz-96 laboratory.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibrate;
pub mod cli;
pub mod dynamics;
pub mod error;
pub mod integrate;
pub mod lagged;
pub mod presets;
pub mod response;
pub mod stats;

pub use error::{Error, Result};
