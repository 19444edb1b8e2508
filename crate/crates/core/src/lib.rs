//! Spherical sliced optimal transport with learned projection weighting.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assignment;
pub mod autodiff;
pub mod bench;
pub mod circular;
pub mod error;
pub mod evolution;
pub mod flows;
pub mod rng;
pub mod sliced;
pub mod sphere;
pub mod stats;
pub mod stiefel;
pub mod weighting;

pub use error::{Error, Result};
