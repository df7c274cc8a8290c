//! Goodness-of-fit autoencoders: latent codes pushed toward Gaussianity by a
//! normality test statistic, with a Stiefel-constrained latent layer.

// `!(x >= tol)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
pub mod error;
pub mod gof;
pub mod hc;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod stiefel;
pub mod trainer;

pub use error::{Error, Result};
