//! Visual-semantic embedding engine for retrieving activities when some classes
//! have only a handful of labelled examples.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod features;
pub mod numerics;
pub mod retrieval;
pub mod semantic;
pub mod training;
pub mod visual;

pub use error::{Error, Result};
