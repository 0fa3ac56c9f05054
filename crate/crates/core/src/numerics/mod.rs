//! Dense tensors, a reverse-mode tape, counter-based randomness and Adam.

mod fdcheck;
mod graph;
mod params;
mod rng;
mod special;
mod tensor;

pub use fdcheck::{check_graph_gradients, finite_difference_check, relative_error, FdConfig, FdReport, ParamCheck};
pub use graph::{Gradients, Graph, Var};
pub use params::{adam_step, Adam, Param, ParamId, ParamStore};
pub use rng::{gaussian_sample, RngStream};
pub use special::{gaussian_log_density, logsumexp, logsumexp_unchecked, sigmoid, softplus, LN_2PI};
pub use tensor::Tensor;
