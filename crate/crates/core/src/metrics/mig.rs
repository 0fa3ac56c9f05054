use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::code::{entropy, LatentCode};
use crate::data::RenderedDataset;
use crate::decomposition::{proportional_allocation, stratified, Moments};
use crate::error::{Error, Result};
use crate::numerics::RngStream;

pub const MIN_ENTROPY_SAMPLES: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MigConfig {
    /// Monte Carlo samples per value of each factor.
    pub samples_per_value: usize,
}

impl Default for MigConfig {
    fn default() -> Self {
        Self {
            samples_per_value: 10_000,
        }
    }
}

/// An estimate with its Monte Carlo standard error.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    fn new((value, stderr): (f64, f64)) -> Self {
        Self { value, stderr }
    }
}

/// Mutual information between every factor and latent, in nats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiEstimateMatrix {
    /// `mi[k][j] = I(z_j; v_k)`.
    pub mi: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<f64>>,
    pub h_factors: Vec<f64>,
    pub h_latents: Vec<f64>,
    pub h_latents_stderr: Vec<f64>,
    /// Samples drawn per latent.
    pub sample_counts: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorGap {
    pub factor: String,
    pub top_latent: usize,
    pub top_mi_norm: f64,
    pub runnerup_mi_norm: f64,
    pub gap: f64,
}

/// An argmax over latents that had to be settled by lowest index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TieBreak {
    pub factor: String,
    pub latents: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MigReport {
    pub mi_matrix: Vec<Vec<f64>>,
    pub mi_stderr: Vec<Vec<f64>>,
    pub h_factors: Vec<f64>,
    pub h_latents: Vec<f64>,
    pub per_factor: Vec<FactorGap>,
    pub mig: f64,
    pub avg_max_mi: f64,
    /// Standard error of `mig`, treating cells as independent.
    pub mig_stderr: f64,
    pub sample_counts: Vec<usize>,
    pub tie_break_events: Vec<TieBreak>,
    /// Factors left out of the average because they take a single value.
    pub excluded_factors: Vec<String>,
}

pub fn factor_entropies(dataset: &RenderedDataset) -> Vec<f64> {
    (0..dataset.factors().num_factors())
        .map(|k| entropy(&dataset.joint().marginal(k)))
        .collect()
}

/// Mixture components over the whole dataset and over every `X_{v_k}`.
struct Strata {
    all: (Vec<usize>, Vec<f64>),
    /// `[k][level] -> (indices, log p(n | v_k))`
    slices: Vec<Vec<(Vec<usize>, Vec<f64>)>>,
}

impl Strata {
    fn new(dataset: &RenderedDataset) -> Result<Self> {
        let p = dataset.index_probs();
        let all = (0..p.len())
            .filter(|&n| p[n] > 0.0)
            .map(|n| (n, p[n].ln()))
            .unzip();
        let table = dataset.factors();
        let slices = (0..table.num_factors())
            .map(|k| {
                (0..table.specs()[k].cardinality())
                    .map(|level| {
                        let c = dataset.conditional_by_level(k, level);
                        (c.indices, c.weights.iter().map(|w| w.ln()).collect())
                    })
                    .collect()
            })
            .collect();
        Ok(Self { all, slices })
    }
}

struct LatentPass {
    entropy: (f64, f64),
    mi: Vec<(f64, f64)>,
    samples: usize,
}

/// One sweep over indices for latent `j`: `−log q(z_j)` for the entropy and
/// the paired `log q(z_j | v_k) − log q(z_j)` for every factor, on shared
/// draws stratified over `n`.
fn latent_pass(
    code: &dyn LatentCode,
    dataset: &RenderedDataset,
    strata: &Strata,
    j: usize,
    counts: &[usize],
    rng: &RngStream,
) -> LatentPass {
    let probs = dataset.index_probs();
    let table = dataset.factors();
    let k_count = table.num_factors();
    let mut h = vec![Moments::default(); probs.len()];
    let mut mi = vec![vec![Moments::default(); probs.len()]; k_count];
    let base = rng.split(j as u64);
    for n in 0..probs.len() {
        if counts[n] == 0 {
            continue;
        }
        let mut stream = base.split(n as u64);
        for _ in 0..counts[n] {
            let z = code.sample(n, j, &mut stream);
            let log_q = code.log_mixture(j, z, &strata.all.0, &strata.all.1);
            h[n].push(-log_q);
            for (k, m) in mi.iter_mut().enumerate() {
                let (idx, lw) = &strata.slices[k][table.level(n, k)];
                m[n].push(code.log_mixture(j, z, idx, lw) - log_q);
            }
        }
    }
    LatentPass {
        entropy: stratified(probs, &h),
        mi: mi.iter().map(|m| stratified(probs, m)).collect(),
        samples: counts.iter().sum(),
    }
}

fn check_code(code: &dyn LatentCode, dataset: &RenderedDataset) -> Result<()> {
    if code.len() != dataset.len() {
        return Err(Error::Shape(format!(
            "code covers {} indices, dataset has {}",
            code.len(),
            dataset.len()
        )));
    }
    Ok(())
}

/// Per-index draw counts giving every value of every factor at least
/// `per_value` samples.
fn per_value_counts(dataset: &RenderedDataset, per_value: usize) -> Vec<usize> {
    let probs = dataset.index_probs();
    let table = dataset.factors();
    let marginals: Vec<Vec<f64>> = (0..table.num_factors())
        .map(|k| dataset.joint().marginal(k))
        .collect();
    (0..probs.len())
        .map(|n| {
            if probs[n] == 0.0 {
                return 0;
            }
            (0..table.num_factors())
                .map(|k| {
                    let cond = probs[n] / marginals[k][table.level(n, k)];
                    (per_value as f64 * cond).ceil() as usize
                })
                .max()
                .unwrap_or(1)
                .max(1)
        })
        .collect()
}

/// `H(z_j)` in nats, stratified over `p(n)` with exact mixture densities.
pub fn estimate_latent_entropy(
    j: usize,
    code: &dyn LatentCode,
    dataset: &RenderedDataset,
    rng: &RngStream,
    samples: usize,
) -> Result<Estimate> {
    check_code(code, dataset)?;
    if samples < MIN_ENTROPY_SAMPLES {
        return Err(Error::invalid(format!(
            "entropy estimation needs at least {MIN_ENTROPY_SAMPLES} samples, got {samples}"
        )));
    }
    if j >= code.latent_dim() {
        return Err(Error::invalid(format!("no latent {j}")));
    }
    let strata = Strata::new(dataset)?;
    let counts = proportional_allocation(dataset.index_probs(), samples);
    Ok(Estimate::new(latent_pass(code, dataset, &strata, j, &counts, rng).entropy))
}

/// `I(z_j; v_k)` in nats with `samples_per_value` draws for every value of
/// `v_k`.
pub fn estimate_mi(
    j: usize,
    k: usize,
    code: &dyn LatentCode,
    dataset: &RenderedDataset,
    rng: &RngStream,
    samples_per_value: usize,
) -> Result<Estimate> {
    check_code(code, dataset)?;
    if j >= code.latent_dim() || k >= dataset.factors().num_factors() {
        return Err(Error::invalid(format!("no cell (factor {k}, latent {j})")));
    }
    let strata = Strata::new(dataset)?;
    if let Some(level) = strata.slices[k].iter().position(|(idx, _)| idx.is_empty()) {
        return Err(Error::invalid(format!(
            "factor {k} value {level} has an empty index set"
        )));
    }
    let counts = per_value_counts(dataset, samples_per_value);
    Ok(Estimate::new(latent_pass(code, dataset, &strata, j, &counts, rng).mi[k]))
}

/// The full factor × latent MI matrix with entropies. Latents run in
/// parallel, each on its own split stream.
pub fn estimate_mi_matrix(
    code: &dyn LatentCode,
    dataset: &RenderedDataset,
    rng: &RngStream,
    config: &MigConfig,
) -> Result<MiEstimateMatrix> {
    check_code(code, dataset)?;
    if config.samples_per_value == 0 {
        return Err(Error::invalid("samples_per_value must be positive"));
    }
    let strata = Strata::new(dataset)?;
    let counts = per_value_counts(dataset, config.samples_per_value);
    let passes: Vec<LatentPass> = (0..code.latent_dim())
        .into_par_iter()
        .map(|j| latent_pass(code, dataset, &strata, j, &counts, rng))
        .collect();
    let k_count = dataset.factors().num_factors();
    Ok(MiEstimateMatrix {
        mi: (0..k_count)
            .map(|k| passes.iter().map(|p| p.mi[k].0).collect())
            .collect(),
        stderr: (0..k_count)
            .map(|k| passes.iter().map(|p| p.mi[k].1).collect())
            .collect(),
        h_factors: factor_entropies(dataset),
        h_latents: passes.iter().map(|p| p.entropy.0).collect(),
        h_latents_stderr: passes.iter().map(|p| p.entropy.1).collect(),
        sample_counts: passes.iter().map(|p| p.samples).collect(),
    })
}

/// Mutual information gap from an MI matrix. Argmax ties go to the lowest
/// latent index; factors with zero entropy are skipped.
pub fn mig_from_matrix(
    matrix: &MiEstimateMatrix,
    factor_names: &[String],
) -> Result<MigReport> {
    let j_count = matrix.h_latents.len();
    if j_count < 2 {
        return Err(Error::invalid("MIG needs at least two latents"));
    }
    let mut per_factor = Vec::new();
    let mut ties = Vec::new();
    let mut excluded = Vec::new();
    let mut var = 0.0;
    for (k, row) in matrix.mi.iter().enumerate() {
        let name = factor_names
            .get(k)
            .cloned()
            .unwrap_or_else(|| format!("factor{k}"));
        let h = matrix.h_factors[k];
        if h <= 1e-12 {
            log::warn!("factor {name} takes a single value; left out of MIG");
            excluded.push(name);
            continue;
        }
        let mut order: Vec<usize> = (0..j_count).collect();
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        let (top, second) = (order[0], order[1]);
        let tied: Vec<usize> = order.iter().copied().filter(|&j| row[j] == row[top]).collect();
        if tied.len() > 1 {
            ties.push(TieBreak {
                factor: name.clone(),
                latents: tied,
            });
        }
        let se = &matrix.stderr[k];
        var += (se[top].powi(2) + se[second].powi(2)) / (h * h);
        per_factor.push(FactorGap {
            factor: name,
            top_latent: top,
            top_mi_norm: row[top] / h,
            runnerup_mi_norm: row[second] / h,
            gap: (row[top] - row[second]) / h,
        });
    }
    if per_factor.is_empty() {
        return Err(Error::invalid(
            "every factor has zero entropy; MIG normalization is undefined",
        ));
    }
    let count = per_factor.len() as f64;
    Ok(MigReport {
        mi_matrix: matrix.mi.clone(),
        mi_stderr: matrix.stderr.clone(),
        h_factors: matrix.h_factors.clone(),
        h_latents: matrix.h_latents.clone(),
        mig: per_factor.iter().map(|f| f.gap).sum::<f64>() / count,
        avg_max_mi: per_factor.iter().map(|f| f.top_mi_norm).sum::<f64>() / count,
        mig_stderr: var.sqrt() / count,
        per_factor,
        sample_counts: matrix.sample_counts.clone(),
        tie_break_events: ties,
        excluded_factors: excluded,
    })
}

pub fn compute_mig(
    code: &dyn LatentCode,
    dataset: &RenderedDataset,
    rng: &RngStream,
    config: &MigConfig,
) -> Result<MigReport> {
    if code.latent_dim() < 2 {
        return Err(Error::invalid("MIG needs at least two latents"));
    }
    let matrix = estimate_mi_matrix(code, dataset, rng, config)?;
    let names: Vec<String> = dataset
        .factors()
        .specs()
        .iter()
        .map(|s| s.name().to_string())
        .collect();
    mig_from_matrix(&matrix, &names)
}
