// `!(x > 0.0)` style checks are there to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub use nalgebra;

pub mod alignment;
pub mod embedding;
pub mod error;
pub mod experiment;
pub mod gmm;
pub mod io;
pub mod json;
pub mod kmeans;
pub mod metrics;
pub mod rng;
pub mod rotation;
pub mod synth;
pub mod transport;
