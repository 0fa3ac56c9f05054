//! Latent codes the metrics can evaluate: Gaussian posteriors from an
//! encoder, discrete surrogates with exact MI, and hand-built encoders.

use crate::data::RenderedDataset;
use crate::error::{Error, Result};
use crate::model::{DiagonalGaussian, Vae};
use crate::numerics::{RngStream, LN_2PI};

/// Per-dimension view of `q(z | n)` over a whole dataset.
pub trait LatentCode: Sync {
    /// Number of data indices.
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn latent_dim(&self) -> usize;

    fn sample(&self, n: usize, j: usize, rng: &mut RngStream) -> f64;

    fn log_density(&self, n: usize, j: usize, z: f64) -> f64;

    /// Mean and variance of `q(z_j | n)`.
    fn moments(&self, n: usize, j: usize) -> (f64, f64);

    /// `log Σ_i exp(log_w[i]) q(z_j | indices[i])`.
    fn log_mixture(&self, j: usize, z: f64, indices: &[usize], log_w: &[f64]) -> f64 {
        let mut acc = LogSumExp::default();
        for (&n, &lw) in indices.iter().zip(log_w) {
            acc.push(lw + self.log_density(n, j, z));
        }
        acc.value()
    }
}

/// Single-pass log-sum-exp accumulator.
#[derive(Clone, Copy)]
pub(crate) struct LogSumExp {
    max: f64,
    sum: f64,
}

impl Default for LogSumExp {
    fn default() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }
}

impl LogSumExp {
    #[inline]
    pub fn push(&mut self, t: f64) {
        if t <= self.max {
            self.sum += (t - self.max).exp();
        } else if t.is_finite() {
            self.sum = self.sum * (self.max - t).exp() + 1.0;
            self.max = t;
        }
    }

    pub fn value(&self) -> f64 {
        if self.sum == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

/// Diagonal-Gaussian posteriors stored dimension-major for fast mixtures.
#[derive(Clone, Debug)]
pub struct GaussianCode {
    dim: usize,
    mean: Vec<Vec<f64>>,
    std: Vec<Vec<f64>>,
    inv_var: Vec<Vec<f64>>,
    log_norm: Vec<Vec<f64>>,
}

impl GaussianCode {
    pub fn new(posteriors: &[DiagonalGaussian]) -> Result<Self> {
        let first = posteriors.first().ok_or(Error::Empty("posteriors"))?;
        let dim = first.dim();
        if posteriors.iter().any(|q| q.dim() != dim) {
            return Err(Error::Shape("posteriors differ in dimension".into()));
        }
        let per_dim = |f: &dyn Fn(f64, f64) -> f64| -> Vec<Vec<f64>> {
            (0..dim)
                .map(|j| {
                    posteriors
                        .iter()
                        .map(|q| f(q.mean[j], q.log_variance[j]))
                        .collect()
                })
                .collect()
        };
        Ok(Self {
            dim,
            mean: per_dim(&|m, _| m),
            std: per_dim(&|_, lv| (0.5 * lv).exp()),
            inv_var: per_dim(&|_, lv| (-lv).exp()),
            log_norm: per_dim(&|_, lv| -0.5 * (LN_2PI + lv)),
        })
    }

    /// Encodes every image of `dataset`.
    pub fn from_vae(vae: &Vae, dataset: &RenderedDataset) -> Result<Self> {
        Self::new(&vae.encode_batch(dataset.images())?)
    }
}

impl LatentCode for GaussianCode {
    fn len(&self) -> usize {
        self.mean[0].len()
    }

    fn latent_dim(&self) -> usize {
        self.dim
    }

    fn sample(&self, n: usize, j: usize, rng: &mut RngStream) -> f64 {
        self.mean[j][n] + self.std[j][n] * rng.normal()
    }

    fn log_density(&self, n: usize, j: usize, z: f64) -> f64 {
        let d = z - self.mean[j][n];
        self.log_norm[j][n] - 0.5 * d * d * self.inv_var[j][n]
    }

    fn moments(&self, n: usize, j: usize) -> (f64, f64) {
        (self.mean[j][n], self.std[j][n] * self.std[j][n])
    }

    fn log_mixture(&self, j: usize, z: f64, indices: &[usize], log_w: &[f64]) -> f64 {
        let (m, iv, c) = (&self.mean[j], &self.inv_var[j], &self.log_norm[j]);
        let mut acc = LogSumExp::default();
        for (&n, &lw) in indices.iter().zip(log_w) {
            let d = z - m[n];
            acc.push(lw + c[n] - 0.5 * d * d * iv[n]);
        }
        acc.value()
    }
}

/// Latents taking values in `{0, .., bins-1}` with categorical `q(z_j | n)`.
/// Densities are probability masses, so the MI estimators apply unchanged
/// and the exact MI is available from contingency tables.
#[derive(Clone, Debug)]
pub struct DiscreteCode {
    bins: usize,
    /// `[n][j][b]`
    probs: Vec<Vec<Vec<f64>>>,
}

impl DiscreteCode {
    pub fn new(bins: usize, probs: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let dim = probs.first().ok_or(Error::Empty("discrete code"))?.len();
        for (n, row) in probs.iter().enumerate() {
            if row.len() != dim || row.iter().any(|p| p.len() != bins) {
                return Err(Error::Shape(format!("index {n} has the wrong table shape")));
            }
            for p in row {
                let s: f64 = p.iter().sum();
                if p.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (s - 1.0).abs() > 1e-9 {
                    return Err(Error::invalid(format!("index {n}: bin probabilities must sum to 1")));
                }
            }
        }
        Ok(Self { bins, probs })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn table(&self, n: usize, j: usize) -> &[f64] {
        &self.probs[n][j]
    }

    /// Exact `I(z_j; v_k)` for every factor and latent, in nats.
    pub fn exact_mi_matrix(&self, dataset: &RenderedDataset) -> Vec<Vec<f64>> {
        let table = dataset.factors();
        let p = dataset.index_probs();
        let dim = self.latent_dim();
        (0..table.num_factors())
            .map(|k| {
                let card = table.specs()[k].cardinality();
                (0..dim)
                    .map(|j| {
                        let mut joint = vec![vec![0.0; self.bins]; card];
                        for n in 0..self.len() {
                            let v = table.level(n, k);
                            for (b, q) in self.probs[n][j].iter().enumerate() {
                                joint[v][b] += p[n] * q;
                            }
                        }
                        discrete_mi(&joint)
                    })
                    .collect()
            })
            .collect()
    }

    /// Exact `H(z_j)` for every latent, in nats.
    pub fn exact_entropies(&self, dataset: &RenderedDataset) -> Vec<f64> {
        let p = dataset.index_probs();
        (0..self.latent_dim())
            .map(|j| {
                let mut m = vec![0.0; self.bins];
                for n in 0..self.len() {
                    for (b, q) in self.probs[n][j].iter().enumerate() {
                        m[b] += p[n] * q;
                    }
                }
                entropy(&m)
            })
            .collect()
    }
}

/// Mutual information of a joint probability table, in nats.
pub fn discrete_mi(joint: &[Vec<f64>]) -> f64 {
    let rows: Vec<f64> = joint.iter().map(|r| r.iter().sum()).collect();
    let cols = joint[0].len();
    let colsum: Vec<f64> = (0..cols).map(|c| joint.iter().map(|r| r[c]).sum()).collect();
    let mut mi = 0.0;
    for (r, row) in joint.iter().enumerate() {
        for (c, &p) in row.iter().enumerate() {
            if p > 0.0 {
                mi += p * (p / (rows[r] * colsum[c])).ln();
            }
        }
    }
    mi
}

/// Shannon entropy in nats.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

impl LatentCode for DiscreteCode {
    fn len(&self) -> usize {
        self.probs.len()
    }

    fn latent_dim(&self) -> usize {
        self.probs[0].len()
    }

    fn sample(&self, n: usize, j: usize, rng: &mut RngStream) -> f64 {
        let u = rng.uniform();
        let mut acc = 0.0;
        let table = &self.probs[n][j];
        for (b, &q) in table.iter().enumerate() {
            acc += q;
            if u < acc {
                return b as f64;
            }
        }
        table.iter().rposition(|&q| q > 0.0).unwrap_or(0) as f64
    }

    fn log_density(&self, n: usize, j: usize, z: f64) -> f64 {
        let b = z.round();
        if b < 0.0 || b >= self.bins as f64 {
            return f64::NEG_INFINITY;
        }
        self.probs[n][j][b as usize].ln()
    }

    fn moments(&self, n: usize, j: usize) -> (f64, f64) {
        let t = &self.probs[n][j];
        let mean: f64 = t.iter().enumerate().map(|(b, q)| b as f64 * q).sum();
        let var = t
            .iter()
            .enumerate()
            .map(|(b, q)| q * (b as f64 - mean).powi(2))
            .sum();
        (mean, var)
    }
}

/// Factor level mapped to `[-1, 1]`.
fn unit_level(dataset: &RenderedDataset, n: usize, k: usize) -> f64 {
    let card = dataset.factors().specs()[k].cardinality();
    2.0 * dataset.factors().level(n, k) as f64 / (card - 1) as f64 - 1.0
}

fn build(
    dataset: &RenderedDataset,
    dim: usize,
    noise: f64,
    mean: impl Fn(usize) -> Vec<f64>,
    informative: &[usize],
) -> Result<GaussianCode> {
    if noise <= 0.0 {
        return Err(Error::invalid("noise must be positive"));
    }
    let posteriors = (0..dataset.len())
        .map(|n| {
            let m = mean(n);
            let lv = (0..dim)
                .map(|j| if informative.contains(&j) { 2.0 * noise.ln() } else { 0.0 })
                .collect();
            DiagonalGaussian::new(m, lv)
        })
        .collect::<Result<Vec<_>>>()?;
    GaussianCode::new(&posteriors)
}

/// Latent `k` encodes factor `k` with narrow noise; the remaining
/// `extra` latents are standard normal regardless of the input.
pub fn axis_aligned_code(dataset: &RenderedDataset, extra: usize, noise: f64) -> Result<GaussianCode> {
    let k = dataset.factors().num_factors();
    let informative: Vec<usize> = (0..k).collect();
    build(
        dataset,
        k + extra,
        noise,
        |n| {
            let mut m: Vec<f64> = (0..k).map(|f| 2.0 * unit_level(dataset, n, f)).collect();
            m.resize(k + extra, 0.0);
            m
        },
        &informative,
    )
}

/// [`axis_aligned_code`] with factor 0 copied into one more latent.
pub fn duplicated_code(dataset: &RenderedDataset, noise: f64) -> Result<GaussianCode> {
    let k = dataset.factors().num_factors();
    let informative: Vec<usize> = (0..=k).collect();
    build(
        dataset,
        k + 1,
        noise,
        |n| {
            let mut m: Vec<f64> = (0..k).map(|f| 2.0 * unit_level(dataset, n, f)).collect();
            m.push(m[0]);
            m
        },
        &informative,
    )
}

/// [`axis_aligned_code`] with the first two latents rotated by `degrees`.
pub fn rotated_code(
    dataset: &RenderedDataset,
    extra: usize,
    noise: f64,
    degrees: f64,
) -> Result<GaussianCode> {
    let k = dataset.factors().num_factors();
    if k < 2 {
        return Err(Error::invalid("rotation needs at least two factors"));
    }
    let (s, c) = degrees.to_radians().sin_cos();
    let informative: Vec<usize> = (0..k).collect();
    build(
        dataset,
        k + extra,
        noise,
        |n| {
            let mut m: Vec<f64> = (0..k).map(|f| 2.0 * unit_level(dataset, n, f)).collect();
            let (a, b) = (m[0], m[1]);
            m[0] = c * a - s * b;
            m[1] = s * a + c * b;
            m.resize(k + extra, 0.0);
            m
        },
        &informative,
    )
}

/// Every latent standard normal for every input.
pub fn uninformative_code(len: usize, dim: usize) -> Result<GaussianCode> {
    GaussianCode::new(&vec![DiagonalGaussian::standard(dim); len])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_bumps_dataset;
    use crate::numerics::logsumexp;

    #[test]
    fn online_logsumexp_matches_batch() {
        let xs = [-3.0, 10.0, 2.5, -700.0, 9.99];
        let mut acc = LogSumExp::default();
        for &x in &xs {
            acc.push(x);
        }
        assert!((acc.value() - logsumexp(&xs).unwrap()).abs() < 1e-12);
        assert_eq!(LogSumExp::default().value(), f64::NEG_INFINITY);
    }

    #[test]
    fn gaussian_mixture_matches_generic() {
        let d = make_bumps_dataset(2, 2, 2).unwrap();
        let code = rotated_code(&d, 1, 0.3, 30.0).unwrap();
        let idx: Vec<usize> = (0..d.len()).collect();
        let lw = vec![-(d.len() as f64).ln(); d.len()];
        let fast = code.log_mixture(1, 0.4, &idx, &lw);
        let slow = logsumexp(
            &idx.iter()
                .map(|&n| lw[n] + code.log_density(n, 1, 0.4))
                .collect::<Vec<_>>(),
        )
        .unwrap();
        assert!((fast - slow).abs() < 1e-12);
    }

    #[test]
    fn exact_discrete_mi_of_copy_is_entropy() {
        let joint = vec![vec![0.25, 0.0], vec![0.0, 0.75]];
        assert!((discrete_mi(&joint) - entropy(&[0.25, 0.75])).abs() < 1e-15);
        let indep = vec![vec![0.1, 0.3], vec![0.15, 0.45]];
        assert!(discrete_mi(&indep).abs() < 1e-15);
    }

    #[test]
    fn discrete_code_validates_tables() {
        assert!(DiscreteCode::new(2, vec![vec![vec![0.5, 0.6]]]).is_err());
        assert!(DiscreteCode::new(2, vec![vec![vec![0.5, 0.5, 0.0]]]).is_err());
        let c = DiscreteCode::new(2, vec![vec![vec![0.25, 0.75]]]).unwrap();
        assert_eq!(c.moments(0, 0), (0.75, 0.1875));
        assert_eq!(c.log_density(0, 0, 5.0), f64::NEG_INFINITY);
    }
}
