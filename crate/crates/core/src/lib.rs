// `!(x > 0.0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autograd;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod featurize;
pub mod model;
pub mod par;
pub mod qa;
pub mod retrieval;
pub mod train;

pub use error::{Error, Result};
