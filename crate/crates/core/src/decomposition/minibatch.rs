//! Minibatch estimators of `log q(z)` and `log q(z_j)`.
//!
//! Both estimators reuse the minibatch that produced the latent samples: row
//! `i` holds `z(n_i) ~ q(z | n_i)` and column `j` is the component `q(· | n_j)`.
//! They differ only in the constant log-weight matrix applied before the
//! row-wise log-sum-exp, which is also what the training objective uses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{prior_log_density, DiagonalGaussian};
use crate::numerics::{gaussian_log_density, logsumexp_unchecked, RngStream, Tensor};

use super::exact::Moments;
use super::{DecompositionEstimate, Method, TermErrors};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    /// Minibatch-weighted sampling.
    #[default]
    Mws,
    /// Minibatch-stratified sampling.
    Mss,
}

impl std::str::FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mws" => Ok(Estimator::Mws),
            "mss" => Ok(Estimator::Mss),
            other => Err(Error::invalid(format!("unknown estimator {other:?} (mws|mss)"))),
        }
    }
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Estimator::Mws => "mws",
            Estimator::Mss => "mss",
        })
    }
}

/// Latent samples of one minibatch with every pairwise log-density.
#[derive(Clone, Debug)]
pub struct MinibatchLatents {
    /// Dataset indices of the batch rows.
    pub indices: Vec<usize>,
    pub dataset_size: usize,
    /// `log p(n_i)` per row; `-ln N` for a uniform index distribution.
    pub log_index_prob: Vec<f64>,
    /// `B x J` latent samples.
    pub z: Tensor,
    /// `L[i][j] = log q(z(n_i) | n_j)`, `B x B`.
    pub log_density: Tensor,
    /// `log q(z_d(n_i) | n_j)`, `B x B x J`.
    pub per_dim: Tensor,
}

impl MinibatchLatents {
    /// Builds the pairwise tables for `z` (row `i` sampled from
    /// `posteriors[i]`) under a uniform index distribution.
    pub fn new(
        indices: Vec<usize>,
        dataset_size: usize,
        z: Tensor,
        posteriors: &[DiagonalGaussian],
    ) -> Result<Self> {
        let b = posteriors.len();
        if b == 0 {
            return Err(Error::Empty("minibatch has no rows"));
        }
        if indices.len() != b || z.rank() != 2 || z.rows() != b {
            return Err(Error::Shape(format!(
                "{} indices and z {:?} for {} posteriors",
                indices.len(),
                z.shape(),
                b
            )));
        }
        if dataset_size == 0 {
            return Err(Error::invalid("dataset size must be positive"));
        }
        let d = z.cols();
        if posteriors.iter().any(|q| q.dim() != d) {
            return Err(Error::Shape("posterior and sample dimensions differ".into()));
        }
        let mut per_dim = vec![0.0; b * b * d];
        let mut joint = vec![0.0; b * b];
        for i in 0..b {
            let zi = z.row(i);
            for (j, q) in posteriors.iter().enumerate() {
                let mut s = 0.0;
                for k in 0..d {
                    let v = gaussian_log_density(zi[k], q.mean[k], q.log_variance[k]);
                    per_dim[(i * b + j) * d + k] = v;
                    s += v;
                }
                joint[i * b + j] = s;
            }
        }
        Ok(Self {
            indices,
            dataset_size,
            log_index_prob: vec![-(dataset_size as f64).ln(); b],
            z,
            log_density: Tensor::from_parts(vec![b, b], joint),
            per_dim: Tensor::from_parts(vec![b, b, d], per_dim),
        })
    }

    /// Samples `z(n_i)` for every row and builds the tables.
    pub fn sample(
        indices: Vec<usize>,
        dataset_size: usize,
        posteriors: &[DiagonalGaussian],
        rng: &mut RngStream,
    ) -> Result<Self> {
        let rows: Vec<Vec<f64>> = posteriors.iter().map(|q| q.reparameterize(rng).z).collect();
        let z = Tensor::from_rows(&rows)?;
        Self::new(indices, dataset_size, z, posteriors)
    }

    /// Replaces the per-row index log-probabilities (non-uniform `p(n)`).
    pub fn with_log_index_prob(mut self, log_prob: Vec<f64>) -> Result<Self> {
        if log_prob.len() != self.batch_size() {
            return Err(Error::Shape("one log-probability per row required".into()));
        }
        self.log_index_prob = log_prob;
        Ok(self)
    }

    pub fn batch_size(&self) -> usize {
        self.indices.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.z.cols()
    }

    fn is_uniform(&self) -> bool {
        let u = -(self.dataset_size as f64).ln();
        self.log_index_prob.iter().all(|&l| (l - u).abs() < 1e-12)
    }

    pub fn log_weights(&self, estimator: Estimator) -> Result<Tensor> {
        match estimator {
            Estimator::Mws => mws_log_weights(self.dataset_size, &self.log_index_prob),
            Estimator::Mss => {
                if !self.is_uniform() {
                    return Err(Error::invalid(
                        "stratified sampling requires a uniform index distribution",
                    ));
                }
                let mut seen = self.indices.clone();
                seen.sort_unstable();
                if seen.windows(2).any(|w| w[0] == w[1]) {
                    return Err(Error::invalid("minibatch indices must be distinct for MSS"));
                }
                mss_log_weights(self.batch_size(), self.dataset_size)
            }
        }
    }
}

/// Log-weights for minibatch-weighted sampling:
/// `w[i][j] = log p(n_i) - log M` (that is `-log(NM)` when `p(n)` is uniform).
pub fn mws_log_weights(dataset_size: usize, log_index_prob: &[f64]) -> Result<Tensor> {
    let m = log_index_prob.len();
    if m == 0 {
        return Err(Error::Empty("minibatch has no rows"));
    }
    if dataset_size < m {
        return Err(Error::invalid(format!(
            "MWS needs N >= M, got N = {dataset_size}, M = {m}"
        )));
    }
    let ln_m = (m as f64).ln();
    let mut data = Vec::with_capacity(m * m);
    for &lp in log_index_prob {
        data.extend(std::iter::repeat_n(lp - ln_m, m));
    }
    Ok(Tensor::from_parts(vec![m, m], data))
}

/// Log-weights for minibatch-stratified sampling over a batch of `batch`
/// distinct indices, `M = batch - 1` of which are "other" points per row.
///
/// Row `i`: `1/N` on itself, `(N - M)/(NM)` on the next row (cyclically),
/// which plays the role of `n_M`, and `1/M` on every other row. A batch that
/// covers the whole dataset uses `1/N` everywhere, the exact mixture.
pub fn mss_log_weights(batch: usize, dataset_size: usize) -> Result<Tensor> {
    let (b, n) = (batch, dataset_size);
    if b == 0 {
        return Err(Error::Empty("minibatch has no rows"));
    }
    if b > n {
        return Err(Error::invalid(format!(
            "MSS draws without replacement: batch {b} exceeds dataset size {n}"
        )));
    }
    if b == n {
        return Ok(Tensor::full(&[b, b], -(n as f64).ln()));
    }
    if b < 2 {
        return Err(Error::invalid("MSS needs at least two rows when the batch is a strict subset"));
    }
    let m = (b - 1) as f64;
    let nf = n as f64;
    let own = -nf.ln();
    let strat = ((nf - m) / (nf * m)).ln();
    let other = -m.ln();
    let mut data = vec![other; b * b];
    for i in 0..b {
        data[i * b + i] = own;
        data[i * b + (i + 1) % b] = strat;
    }
    Ok(Tensor::from_parts(vec![b, b], data))
}

/// `log f(z, n*, B̂)` for the stratified density estimator, given
/// `own = log q(z|n*)` and `others[m] = log q(z|n_m)` for `m = 1..=M`; the
/// last entry of `others` is `n_M`. When `others` covers every other index
/// the result is the exact mixture density, matching [`mss_log_weights`].
pub fn stratified_log_density(dataset_size: usize, own: f64, others: &[f64]) -> Result<f64> {
    let n = dataset_size as f64;
    let m = others.len();
    if m == 0 {
        return if dataset_size == 1 {
            Ok(own)
        } else {
            Err(Error::invalid("need at least one other index when N > 1"))
        };
    }
    if m >= dataset_size {
        return Err(Error::invalid(format!(
            "{m} other indices for a dataset of {dataset_size}"
        )));
    }
    if m + 1 == dataset_size {
        // the batch is the whole dataset: use the exact mixture
        let all: Vec<f64> = std::iter::once(own).chain(others.iter().copied()).map(|v| v - n.ln()).collect();
        return Ok(logsumexp_unchecked(all));
    }
    let mf = m as f64;
    let terms = std::iter::once(own - n.ln())
        .chain(others[..m - 1].iter().map(|v| v - mf.ln()))
        .chain(std::iter::once(others[m - 1] + ((n - mf) / (n * mf)).ln()));
    Ok(logsumexp_unchecked(terms.collect::<Vec<_>>()))
}

fn weighted_row_lse(table: &Tensor, weights: &Tensor, d: usize) -> Vec<f64> {
    let b = weights.rows();
    let mut out = vec![0.0; b * d];
    let mut buf = vec![0.0; b];
    for i in 0..b {
        for k in 0..d {
            for j in 0..b {
                buf[j] = table.data()[(i * b + j) * d + k] + weights.data()[i * b + j];
            }
            out[i * d + k] = logsumexp_unchecked(buf.iter().copied());
        }
    }
    out
}

/// MWS estimate of `log q(z(n_i))` for every row.
pub fn mws_log_qz(batch: &MinibatchLatents) -> Result<Vec<f64>> {
    let w = batch.log_weights(Estimator::Mws)?;
    Ok(weighted_row_lse(&batch.log_density, &w, 1))
}

/// MSS estimate of `log q(z(n_i))` for every row of a batch drawn without
/// replacement (`M + 1` rows).
pub fn mss_log_qz(batch: &MinibatchLatents) -> Result<Vec<f64>> {
    let w = batch.log_weights(Estimator::Mss)?;
    Ok(weighted_row_lse(&batch.log_density, &w, 1))
}

/// Estimates of `log q(z_j(n_i))`, row-major `B x J`.
pub fn per_dimension_log_marginals(batch: &MinibatchLatents, estimator: Estimator) -> Result<Vec<f64>> {
    let w = batch.log_weights(estimator)?;
    Ok(weighted_row_lse(&batch.per_dim, &w, batch.latent_dim()))
}

pub fn log_qz(batch: &MinibatchLatents, estimator: Estimator) -> Result<Vec<f64>> {
    match estimator {
        Estimator::Mws => mws_log_qz(batch),
        Estimator::Mss => mss_log_qz(batch),
    }
}

/// Batch-mean decomposition terms `(index-code MI, TC, dimension-wise KL)`.
pub fn minibatch_terms(batch: &MinibatchLatents, estimator: Estimator) -> Result<(f64, f64, f64)> {
    let lqz = log_qz(batch, estimator)?;
    let marg = per_dimension_log_marginals(batch, estimator)?;
    let (b, d) = (batch.batch_size(), batch.latent_dim());
    let (mut mi, mut tc, mut dw) = (0.0, 0.0, 0.0);
    for i in 0..b {
        let own = batch.log_density.get2(i, i);
        let prod: f64 = marg[i * d..(i + 1) * d].iter().sum();
        let lpz = prior_log_density(batch.z.row(i));
        mi += own - lqz[i];
        tc += lqz[i] - prod;
        dw += prod - lpz;
    }
    let bf = b as f64;
    Ok((mi / bf, tc / bf, dw / bf))
}

/// Averages minibatch decomposition estimates over `num_batches` random
/// batches drawn without replacement from the dataset posteriors.
pub fn minibatch_decomposition(
    posteriors: &[DiagonalGaussian],
    estimator: Estimator,
    batch_size: usize,
    num_batches: usize,
    rng: &RngStream,
) -> Result<DecompositionEstimate> {
    let n = posteriors.len();
    if batch_size == 0 || batch_size > n {
        return Err(Error::invalid(format!(
            "batch size {batch_size} must be in 1..={n}"
        )));
    }
    if num_batches == 0 {
        return Err(Error::invalid("need at least one batch"));
    }
    let (mut mi, mut tc, mut dw, mut tot) =
        (Moments::default(), Moments::default(), Moments::default(), Moments::default());
    for t in 0..num_batches {
        let mut stream = rng.split(t as u64);
        let idx = stream.sample_without_replacement(n, batch_size);
        let qs: Vec<DiagonalGaussian> = idx.iter().map(|&i| posteriors[i].clone()).collect();
        let batch = MinibatchLatents::sample(idx, n, &qs, &mut stream)?;
        let (a, b, c) = minibatch_terms(&batch, estimator)?;
        mi.push(a);
        tc.push(b);
        dw.push(c);
        tot.push(a + b + c);
    }
    let se = |m: &Moments| m.var_of_mean().sqrt();
    Ok(DecompositionEstimate {
        method: match estimator {
            Estimator::Mws => Method::Mws,
            Estimator::Mss => Method::Mss,
        },
        index_code_mi: mi.mean(),
        total_correlation: tc.mean(),
        dimension_wise_kl: dw.mean(),
        mc_stderr: TermErrors {
            index_code_mi: se(&mi),
            total_correlation: se(&tc),
            dimension_wise_kl: se(&dw),
            total: se(&tot),
        },
        num_samples: num_batches * batch_size,
        batch_size: Some(batch_size),
        num_batches: Some(num_batches),
    })
}
