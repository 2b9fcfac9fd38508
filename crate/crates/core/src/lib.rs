//! Gravity-type panel regressions for bilateral migration flows.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
pub mod descriptives;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod linalg;
pub mod margins;
pub mod specs;
pub mod synth;
pub mod transforms;

pub use error::{Error, Result};
