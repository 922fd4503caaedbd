//! Bipartite graph neural network beamforming for multi-user MISO downlinks.

// `!(x > 0.0)` is used on purpose so NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod autodiff;
pub mod baselines;
pub mod beamcore;
pub mod bgnn;
pub mod channel;
pub mod checkpoint;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod linalg;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
