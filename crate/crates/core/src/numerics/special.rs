//! Scalar special functions used across the density code.

use crate::error::{Error, Result};

/// `ln(2π)`.
pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `log Σ exp(vᵢ)` computed with a max shift.
///
/// Returns `-inf` when every entry is `-inf`.
pub fn logsumexp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("logsumexp of an empty slice"));
    }
    Ok(logsumexp_unchecked(values.iter().copied()))
}

/// Max-shifted log-sum-exp over an iterator; `-inf` for an empty iterator.
pub fn logsumexp_unchecked<I>(values: I) -> f64
where
    I: IntoIterator<Item = f64>,
    I::IntoIter: Clone,
{
    let iter = values.into_iter();
    let max = iter.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let s: f64 = iter.map(|v| (v - max).exp()).sum();
    max + s.ln()
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Log-density of `N(mean, exp(log_var))` at `z`.
#[inline]
pub fn gaussian_log_density(z: f64, mean: f64, log_var: f64) -> f64 {
    let d = z - mean;
    -0.5 * (LN_2PI + log_var + d * d * (-log_var).exp())
}
