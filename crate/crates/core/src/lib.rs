//! Deterministic simulation of distributed SGD on heterogeneous clusters.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algorithms;
pub mod cluster;
pub mod error;
pub mod model;
pub mod numeric;
pub mod theory;
pub mod runner;

pub use error::{Error, Result};
