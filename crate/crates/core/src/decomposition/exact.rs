//! Exact aggregated-posterior densities and the Monte Carlo decomposition
//! that uses them.

use crate::error::{Error, Result};
use crate::model::{prior_log_density, DiagonalGaussian};
use crate::numerics::{logsumexp_unchecked, RngStream, LN_2PI};

use super::{DecompositionEstimate, Method, TermErrors};

/// Largest dataset the exact mixture code will enumerate.
pub const EXACT_MAX_POINTS: usize = 4096;
/// Fewest Monte Carlo samples accepted by [`exact_decomposition`].
pub const EXACT_MIN_SAMPLES: usize = 10_000;

/// The aggregated posterior `q(z) = Σ_n p(n) q(z|n)` held in a form that is
/// cheap to evaluate repeatedly.
#[derive(Clone, Debug)]
pub struct AggregatePosterior {
    dim: usize,
    log_weights: Vec<f64>,
    // per component, per dim: mean, 1/var, -(ln 2π + log var)/2
    mean: Vec<f64>,
    inv_var: Vec<f64>,
    offset: Vec<f64>,
}

impl AggregatePosterior {
    /// Mixture with uniform `p(n) = 1/N`.
    pub fn uniform(posteriors: &[DiagonalGaussian]) -> Result<Self> {
        let n = posteriors.len();
        Self::weighted(posteriors, &vec![1.0 / n.max(1) as f64; n])
    }

    /// Mixture with index probabilities `probs` (must sum to one).
    pub fn weighted(posteriors: &[DiagonalGaussian], probs: &[f64]) -> Result<Self> {
        if posteriors.is_empty() {
            return Err(Error::Empty("aggregated posterior needs at least one component"));
        }
        if probs.len() != posteriors.len() {
            return Err(Error::Shape(format!(
                "{} weights for {} components",
                probs.len(),
                posteriors.len()
            )));
        }
        if probs.iter().any(|p| p.is_nan() || *p < 0.0) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("index probabilities must be non-negative and sum to 1"));
        }
        let dim = posteriors[0].dim();
        let mut mean = Vec::with_capacity(dim * posteriors.len());
        let mut inv_var = Vec::with_capacity(mean.capacity());
        let mut offset = Vec::with_capacity(mean.capacity());
        for q in posteriors {
            if q.dim() != dim {
                return Err(Error::Shape("posteriors differ in latent dimension".into()));
            }
            for j in 0..dim {
                let lv = q.log_variance[j];
                mean.push(q.mean[j]);
                inv_var.push((-lv).exp());
                offset.push(-0.5 * (LN_2PI + lv));
            }
        }
        Ok(Self {
            dim,
            log_weights: probs.iter().map(|p| p.ln()).collect(),
            mean,
            inv_var,
            offset,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    #[inline]
    fn component_dim(&self, n: usize, j: usize, z: f64) -> f64 {
        let k = n * self.dim + j;
        let d = z - self.mean[k];
        self.offset[k] - 0.5 * d * d * self.inv_var[k]
    }

    /// `log q(z_j | n)`.
    pub fn component_log_density_dim(&self, n: usize, j: usize, z: f64) -> f64 {
        self.component_dim(n, j, z)
    }

    pub fn component_log_density(&self, n: usize, z: &[f64]) -> f64 {
        (0..self.dim).map(|j| self.component_dim(n, j, z[j])).sum()
    }

    /// `log q(z)`.
    pub fn log_density(&self, z: &[f64]) -> f64 {
        logsumexp_unchecked(
            (0..self.len()).map(|n| self.log_weights[n] + self.component_log_density(n, z)),
        )
    }

    /// `log q(z_j)`, the marginal of one latent coordinate.
    pub fn marginal_log_density(&self, j: usize, z: f64) -> f64 {
        logsumexp_unchecked((0..self.len()).map(|n| self.log_weights[n] + self.component_dim(n, j, z)))
    }

    /// Evaluates `log q(z)` and every `log q(z_j)` in one pass.
    pub fn joint_and_marginals(&self, z: &[f64], scratch: &mut Scratch) -> (f64, f64) {
        let n = self.len();
        scratch.joint.clear();
        scratch.per_dim.resize(self.dim * n, 0.0);
        for c in 0..n {
            let mut s = 0.0;
            for j in 0..self.dim {
                let v = self.component_dim(c, j, z[j]);
                scratch.per_dim[j * n + c] = v + self.log_weights[c];
                s += v;
            }
            scratch.joint.push(s + self.log_weights[c]);
        }
        let joint = logsumexp_unchecked(scratch.joint.iter().copied());
        let marginal_sum = (0..self.dim)
            .map(|j| logsumexp_unchecked(scratch.per_dim[j * n..(j + 1) * n].iter().copied()))
            .sum();
        (joint, marginal_sum)
    }

    pub fn log_weight(&self, n: usize) -> f64 {
        self.log_weights[n]
    }
}

#[derive(Default)]
pub struct Scratch {
    joint: Vec<f64>,
    per_dim: Vec<f64>,
}

/// `log (1/N Σ_n q(z|n))`.
pub fn exact_aggregated_posterior_logdensity(z: &[f64], posteriors: &[DiagonalGaussian]) -> Result<f64> {
    let agg = AggregatePosterior::uniform(posteriors)?;
    if z.len() != agg.dim() {
        return Err(Error::Shape(format!(
            "z has {} dims, posteriors have {}",
            z.len(),
            agg.dim()
        )));
    }
    Ok(agg.log_density(z))
}

/// Allocates `total` samples across strata in proportion to `probs`, with
/// at least one sample for every stratum of positive mass.
pub(crate) fn proportional_allocation(probs: &[f64], total: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = probs
        .iter()
        .map(|&p| if p > 0.0 { ((p * total as f64).floor() as usize).max(1) } else { 0 })
        .collect();
    let mut assigned: usize = counts.iter().sum();
    // hand out the remainder by largest fractional part, lowest index first
    if assigned < total {
        let mut order: Vec<usize> = (0..probs.len()).filter(|&i| probs[i] > 0.0).collect();
        order.sort_by(|&a, &b| {
            let fa = probs[a] * total as f64 - (probs[a] * total as f64).floor();
            let fb = probs[b] * total as f64 - (probs[b] * total as f64).floor();
            fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
        });
        for &i in order.iter().cycle().take(total - assigned) {
            counts[i] += 1;
        }
        assigned = total;
    }
    debug_assert!(assigned >= total);
    counts
}

/// Streaming mean/variance for one stratum.
#[derive(Clone, Copy, Default)]
pub(crate) struct Moments {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn count(&self) -> usize {
        self.n
    }

    /// Variance of the stratum mean.
    pub fn var_of_mean(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64 / self.n as f64
        }
    }
}

/// Combines per-stratum moments into a stratified mean and standard error.
pub(crate) fn stratified(weights: &[f64], strata: &[Moments]) -> (f64, f64) {
    let mut mean = 0.0;
    let mut var = 0.0;
    for (w, m) in weights.iter().zip(strata) {
        if m.count() == 0 {
            continue;
        }
        mean += w * m.mean();
        var += w * w * m.var_of_mean();
    }
    (mean, var.sqrt())
}

/// Monte Carlo estimate of the three decomposition terms using exact
/// mixture densities, stratified over the data index.
pub fn exact_decomposition(
    posteriors: &[DiagonalGaussian],
    rng: &RngStream,
    num_samples: usize,
) -> Result<DecompositionEstimate> {
    let n = posteriors.len();
    exact_decomposition_weighted(posteriors, &vec![1.0 / n.max(1) as f64; n], rng, num_samples)
}

/// [`exact_decomposition`] for a non-uniform index distribution `p(n)`.
pub fn exact_decomposition_weighted(
    posteriors: &[DiagonalGaussian],
    probs: &[f64],
    rng: &RngStream,
    num_samples: usize,
) -> Result<DecompositionEstimate> {
    if posteriors.len() > EXACT_MAX_POINTS {
        return Err(Error::invalid(format!(
            "exact decomposition enumerates at most {EXACT_MAX_POINTS} points, got {}",
            posteriors.len()
        )));
    }
    if num_samples < EXACT_MIN_SAMPLES {
        return Err(Error::invalid(format!(
            "exact decomposition needs at least {EXACT_MIN_SAMPLES} samples, got {num_samples}"
        )));
    }
    let agg = AggregatePosterior::weighted(posteriors, probs)?;
    let counts = proportional_allocation(probs, num_samples);
    let mut mi = vec![Moments::default(); agg.len()];
    let mut tc = mi.clone();
    let mut dw = mi.clone();
    let mut total = mi.clone();
    let mut scratch = Scratch::default();
    for (idx, q) in posteriors.iter().enumerate() {
        let mut stream = rng.split(idx as u64);
        for _ in 0..counts[idx] {
            let z = q.reparameterize(&mut stream).z;
            let own = q.log_density_unchecked(&z);
            let (log_qz, log_prod) = agg.joint_and_marginals(&z, &mut scratch);
            let log_pz = prior_log_density(&z);
            mi[idx].push(own - log_qz);
            tc[idx].push(log_qz - log_prod);
            dw[idx].push(log_prod - log_pz);
            total[idx].push(own - log_pz);
        }
    }
    let (index_code_mi, se_mi) = stratified(probs, &mi);
    let (total_correlation, se_tc) = stratified(probs, &tc);
    let (dimension_wise_kl, se_dw) = stratified(probs, &dw);
    let (_, se_total) = stratified(probs, &total);
    Ok(DecompositionEstimate {
        method: Method::Exact,
        index_code_mi,
        total_correlation,
        dimension_wise_kl,
        mc_stderr: TermErrors {
            index_code_mi: se_mi,
            total_correlation: se_tc,
            dimension_wise_kl: se_dw,
            total: se_total,
        },
        num_samples: counts.iter().sum(),
        batch_size: None,
        num_batches: None,
    })
}

/// `Σ_n p(n) KL(q(z|n) || p(z))`, the left-hand side of the decomposition.
pub fn average_posterior_kl(posteriors: &[DiagonalGaussian]) -> f64 {
    posteriors.iter().map(DiagonalGaussian::kl_to_standard_normal).sum::<f64>() / posteriors.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(mean: &[f64], lv: &[f64]) -> DiagonalGaussian {
        DiagonalGaussian::new(mean.to_vec(), lv.to_vec()).unwrap()
    }

    #[test]
    fn single_component_equals_its_density() {
        let c = q(&[0.3, -1.0], &[0.2, -0.5]);
        let z = [0.1, 0.4];
        let v = exact_aggregated_posterior_logdensity(&z, std::slice::from_ref(&c)).unwrap();
        assert!((v - c.log_density(&z).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn identical_components_collapse() {
        let c = q(&[0.3], &[0.2]);
        let v = exact_aggregated_posterior_logdensity(&[1.1], &[c.clone(), c.clone()]).unwrap();
        assert!((v - c.log_density(&[1.1]).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn empty_mixture_rejected() {
        assert!(matches!(
            exact_aggregated_posterior_logdensity(&[0.0], &[]),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn guards_on_size_and_samples() {
        let rng = RngStream::new(0);
        let ps = vec![DiagonalGaussian::standard(1); 3];
        assert!(exact_decomposition(&ps, &rng, 9_999).is_err());
        let big = vec![DiagonalGaussian::standard(1); EXACT_MAX_POINTS + 1];
        assert!(exact_decomposition(&big, &rng, 10_000).is_err());
    }

    #[test]
    fn allocation_covers_total() {
        let c = proportional_allocation(&[0.5, 0.25, 0.25], 10);
        assert_eq!(c.iter().sum::<usize>(), 10);
        let c = proportional_allocation(&[1.0 / 3.0; 3], 10_000);
        assert_eq!(c, vec![3334, 3333, 3333]);
    }

    #[test]
    fn prior_posteriors_give_zero_terms() {
        let rng = RngStream::new(4);
        let ps = vec![DiagonalGaussian::standard(2); 5];
        let est = exact_decomposition(&ps, &rng, 20_000).unwrap();
        // q(z|n) = q(z) = p(z): every per-sample term is exactly zero
        assert!(est.index_code_mi.abs() < 1e-12);
        assert!(est.total_correlation.abs() < 1e-12);
        assert!(est.dimension_wise_kl.abs() < 1e-12);
    }

    #[test]
    fn single_point_dataset() {
        let rng = RngStream::new(8);
        let c = q(&[0.8, -0.4], &[-1.0, 0.5]);
        let est = exact_decomposition(std::slice::from_ref(&c), &rng, 50_000).unwrap();
        assert!(est.index_code_mi.abs() < 1e-12);
        assert!(est.total_correlation.abs() < 1e-12);
        let kl = c.kl_to_standard_normal();
        assert!((est.dimension_wise_kl - kl).abs() < 3.0 * est.mc_stderr.dimension_wise_kl);
    }
}
