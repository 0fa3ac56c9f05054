//! Total-correlation decomposition of the ELBO, minibatch estimators of the
//! aggregated posterior, β-TCVAE training and the mutual information gap.

#![allow(clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod data;
pub mod decomposition;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod trainer;

pub use error::{Error, Result};
pub use numerics::{Graph, ParamStore, RngStream, Tensor, Var};
