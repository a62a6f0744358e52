// NaN-rejecting guards are written as negated comparisons on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod causal_order;
pub mod error;
pub mod frames;
pub mod geometry;
pub mod invariance;
pub mod pipeline;
pub mod quadrature;
pub mod quantum;
pub mod scenarios;
pub mod worldlines;

pub use error::{Error, Result};
