//! Disentanglement metrics: the mutual information gap and the Higgins and
//! Kim & Mnih classifier scores.

mod classifier;
mod code;
mod mig;

pub use classifier::{higgins_metric, kim_mnih_metric, latent_stddevs, HigginsConfig, KimMnihConfig};
pub use code::{
    axis_aligned_code, discrete_mi, duplicated_code, entropy, rotated_code, uninformative_code,
    DiscreteCode, GaussianCode, LatentCode,
};
pub use mig::{
    compute_mig, estimate_latent_entropy, estimate_mi, estimate_mi_matrix, factor_entropies,
    mig_from_matrix, Estimate, FactorGap, MiEstimateMatrix, MigConfig, MigReport, TieBreak,
    MIN_ENTROPY_SAMPLES,
};
