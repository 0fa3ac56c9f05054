use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{gaussian_log_density, RngStream, LN_2PI};

/// Factorized Gaussian `q(z|n)` with per-dimension mean and log-variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagonalGaussian {
    pub mean: Vec<f64>,
    pub log_variance: Vec<f64>,
}

/// A reparameterized draw `z = mean + exp(log_variance / 2) * eps`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSample {
    pub z: Vec<f64>,
    pub index: usize,
    pub eps: Vec<f64>,
}

impl DiagonalGaussian {
    pub fn new(mean: Vec<f64>, log_variance: Vec<f64>) -> Result<Self> {
        if mean.len() != log_variance.len() {
            return Err(Error::Shape(format!(
                "mean has {} dims, log-variance has {}",
                mean.len(),
                log_variance.len()
            )));
        }
        if let Some(v) = log_variance.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("log-variance must be finite, got {v}")));
        }
        Ok(Self { mean, log_variance })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            log_variance: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check_len(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dim() {
            return Err(Error::Shape(format!(
                "z has {} dims, posterior has {}",
                z.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    pub fn log_density(&self, z: &[f64]) -> Result<f64> {
        self.check_len(z)?;
        Ok(self.log_density_unchecked(z))
    }

    #[inline]
    pub(crate) fn log_density_unchecked(&self, z: &[f64]) -> f64 {
        z.iter()
            .zip(&self.mean)
            .zip(&self.log_variance)
            .map(|((&z, &m), &l)| gaussian_log_density(z, m, l))
            .sum()
    }

    pub fn log_density_per_dimension(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_len(z)?;
        Ok(z.iter()
            .zip(&self.mean)
            .zip(&self.log_variance)
            .map(|((&z, &m), &l)| gaussian_log_density(z, m, l))
            .collect())
    }

    #[inline]
    pub fn log_density_dim(&self, j: usize, z: f64) -> f64 {
        gaussian_log_density(z, self.mean[j], self.log_variance[j])
    }

    /// Closed-form `KL(q || N(0, I))`.
    pub fn kl_to_standard_normal(&self) -> f64 {
        0.5 * self
            .mean
            .iter()
            .zip(&self.log_variance)
            .map(|(&m, &l)| m * m + l.exp() - l - 1.0)
            .sum::<f64>()
    }

    /// Differential entropy of the Gaussian.
    pub fn entropy(&self) -> f64 {
        0.5 * self
            .log_variance
            .iter()
            .map(|l| 1.0 + LN_2PI + l)
            .sum::<f64>()
    }

    pub fn reparameterize(&self, rng: &mut RngStream) -> LatentSample {
        let eps: Vec<f64> = (0..self.dim()).map(|_| rng.normal()).collect();
        self.reparameterize_with(eps, 0)
    }

    /// Reparameterizes with a caller-supplied noise vector.
    pub fn reparameterize_with(&self, eps: Vec<f64>, index: usize) -> LatentSample {
        let z = self
            .mean
            .iter()
            .zip(&self.log_variance)
            .zip(&eps)
            .map(|((&m, &l), &e)| m + (0.5 * l).exp() * e)
            .collect();
        LatentSample { z, index, eps }
    }

    /// Draws a single coordinate `z_j`.
    pub fn sample_dim(&self, j: usize, rng: &mut RngStream) -> f64 {
        self.mean[j] + (0.5 * self.log_variance[j]).exp() * rng.normal()
    }
}

/// Standard-normal prior log-density `Σ_j log N(z_j; 0, 1)`.
pub fn prior_log_density(z: &[f64]) -> f64 {
    z.iter().map(|&v| -0.5 * (LN_2PI + v * v)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_density_unit_variance_at_mean() {
        let q = DiagonalGaussian::new(vec![0.3], vec![0.0]).unwrap();
        let v = q.log_density(&[0.3]).unwrap();
        assert!((v + 0.918_938_5).abs() < 1e-7);
    }

    #[test]
    fn log_density_two_dim_standard_normal() {
        let q = DiagonalGaussian::standard(2);
        assert!((q.log_density(&[0.0, 0.0]).unwrap() + 1.837_877_1).abs() < 1e-7);
    }

    #[test]
    fn length_mismatch_rejected() {
        let q = DiagonalGaussian::standard(3);
        assert!(q.log_density(&[0.0]).is_err());
        assert!(q.log_density_per_dimension(&[0.0; 4]).is_err());
        assert!(DiagonalGaussian::new(vec![0.0], vec![0.0, 1.0]).is_err());
        assert!(DiagonalGaussian::new(vec![0.0], vec![f64::NEG_INFINITY]).is_err());
    }

    #[test]
    fn per_dimension_sums_to_joint() {
        let q = DiagonalGaussian::new(vec![0.5, -1.0, 2.0], vec![0.1, -0.7, 1.3]).unwrap();
        let z = [0.2, 0.4, -0.9];
        let parts = q.log_density_per_dimension(&z).unwrap();
        let joint = q.log_density(&z).unwrap();
        assert!((parts.iter().sum::<f64>() - joint).abs() < 1e-12);
        let one = DiagonalGaussian::new(vec![0.5], vec![0.1]).unwrap();
        assert_eq!(
            one.log_density_per_dimension(&[0.2]).unwrap()[0],
            one.log_density(&[0.2]).unwrap()
        );
    }

    #[test]
    fn kl_closed_form_cases() {
        assert_eq!(DiagonalGaussian::standard(4).kl_to_standard_normal(), 0.0);
        let q = DiagonalGaussian::new(vec![1.0], vec![0.0]).unwrap();
        assert!((q.kl_to_standard_normal() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_noise_returns_mean() {
        let q = DiagonalGaussian::new(vec![1.5, -2.0], vec![0.3, 4.0]).unwrap();
        let s = q.reparameterize_with(vec![0.0, 0.0], 7);
        assert_eq!(s.z, q.mean);
        assert_eq!(s.index, 7);
    }

    #[test]
    fn tiny_variance_collapses_to_mean() {
        let q = DiagonalGaussian::new(vec![0.25, -3.0], vec![-30.0, -30.0]).unwrap();
        let mut rng = RngStream::new(1);
        let s = q.reparameterize(&mut rng);
        for (z, m) in s.z.iter().zip(&q.mean) {
            assert!((z - m).abs() < 1e-6);
        }
    }
}
