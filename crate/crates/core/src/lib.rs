//! Nonconforming finite elements for optimal control of doubly diffusive flows.

// Index loops over small fixed arrays read closer to the formulas, and
// `!(x > 0.0)` is used on purpose so that NaN is rejected.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod adjoint;
pub mod assembly;
pub mod cavity;
pub mod cli;
pub mod config;
pub mod control;
pub mod error;
pub mod export;
pub mod fem;
pub mod linalg;
pub mod mesh;
pub mod params;
pub mod quadrature;
pub mod state;
pub mod verification;

pub use error::{Error, Result};
