//! Simulation and stability analysis of feedback loops closed over a lossy,
//! round-based multi-hop wireless network with runtime mode changes.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod control;
pub mod error;
pub mod linalg;
pub mod model;
pub mod net;
pub mod sim;
pub mod stability;

pub use error::{Error, Result};

/// Version tag written into every JSON and CSV artifact.
pub const SCHEMA_VERSION: u32 = 1;
