// Negated comparisons below are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod pairing;
pub mod survdata;
pub mod trainer;

pub use error::{Error, Result};
