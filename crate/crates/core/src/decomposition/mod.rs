//! The index-code MI / total correlation / dimension-wise KL decomposition of
//! the average posterior KL, its exact and minibatch estimators, and the
//! objectives built from them.

mod exact;
mod minibatch;
mod objective;

pub use exact::{
    average_posterior_kl, exact_aggregated_posterior_logdensity, exact_decomposition,
    exact_decomposition_weighted, AggregatePosterior, Scratch, EXACT_MAX_POINTS, EXACT_MIN_SAMPLES,
};
pub use minibatch::{
    log_qz, minibatch_decomposition, minibatch_terms, mss_log_qz, mss_log_weights, mws_log_qz,
    mws_log_weights, per_dimension_log_marginals, stratified_log_density, Estimator,
    MinibatchLatents,
};
pub use objective::{
    beta_tcvae_loss, beta_vae_loss, draw_noise, DecompositionWeights, LossOutput, LossTerms,
    Minibatch,
};

pub(crate) use exact::{proportional_allocation, stratified, Moments};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Exact,
    Mws,
    Mss,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TermErrors {
    pub index_code_mi: f64,
    pub total_correlation: f64,
    pub dimension_wise_kl: f64,
    /// Standard error of the sum of the three terms.
    pub total: f64,
}

/// Estimates of the three decomposition terms, in nats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionEstimate {
    pub method: Method,
    pub index_code_mi: f64,
    pub total_correlation: f64,
    pub dimension_wise_kl: f64,
    pub mc_stderr: TermErrors,
    pub num_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_batches: Option<usize>,
}

impl DecompositionEstimate {
    pub fn total(&self) -> f64 {
        self.index_code_mi + self.total_correlation + self.dimension_wise_kl
    }
}
