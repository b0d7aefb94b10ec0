//! Simulation, control and tuning for multi-robot search over a burning area.
// Validation uses `!(x >= lo)` style checks so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod environment;
pub mod error;
pub mod export;
pub mod fire;
pub mod fuzzy;
pub mod grid;
pub mod harness;
pub mod optim;
pub mod predictive;
pub mod robot;
pub mod scenarios;
pub mod sim;

pub use error::{Error, Result};
pub use grid::{Cell, Coarsening, GridGeometry, Matrix};
