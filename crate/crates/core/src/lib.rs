// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Desk-scale simulation of federated prompt learning over a frozen
//! vision-language surrogate.

pub mod algorithms;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod federation;
pub mod numerics;
pub mod rng;
pub mod vlm;

pub use error::{Error, Result};
