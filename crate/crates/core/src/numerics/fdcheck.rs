//! Central finite-difference gradient checking.

use serde::Serialize;

use super::graph::{Gradients, Graph, Var};
use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct FdConfig {
    /// Central-difference half step `h`.
    pub step: f64,
    /// Maximum accepted relative error.
    pub tolerance: f64,
    /// Denominator floor: `|a - n| / max(|a|, |n|, floor)`.
    pub floor: f64,
    /// Probe at most this many entries per parameter (evenly strided).
    pub max_probes: Option<usize>,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-5,
            floor: 1e-6,
            max_probes: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub probes: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct FdReport {
    pub params: Vec<ParamCheck>,
    pub passed: bool,
}

impl FdReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

/// Compares `analytic` gradients against central differences of `loss_fn`.
///
/// `loss_fn` must be a pure function of the parameter values; it is evaluated
/// twice at the unperturbed point and any disagreement is an error.
pub fn finite_difference_check<F>(
    mut loss_fn: F,
    params: &ParamStore,
    analytic: &Gradients,
    cfg: &FdConfig,
) -> Result<FdReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    let first = loss_fn(params)?;
    let second = loss_fn(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }

    let mut work = params.clone();
    let mut checks = Vec::new();
    for id in params.ids() {
        let len = params.value(id).len();
        let probes: Vec<usize> = match cfg.max_probes {
            Some(k) if k < len => (0..k).map(|i| i * len / k).collect(),
            _ => (0..len).collect(),
        };
        let zeros;
        let grad = match analytic.get(id) {
            Some(g) => g.data(),
            None => {
                zeros = vec![0.0; len];
                &zeros
            }
        };
        let mut check = ParamCheck {
            name: params.name(id).to_string(),
            probes: probes.len(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            passed: true,
        };
        for &i in &probes {
            let orig = params.value(id).data()[i];
            work.value_mut(id).data_mut()[i] = orig + cfg.step;
            let plus = loss_fn(&work)?;
            work.value_mut(id).data_mut()[i] = orig - cfg.step;
            let minus = loss_fn(&work)?;
            work.value_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let err = relative_error(grad[i], numeric, cfg.floor);
            if err > check.max_rel_error || !err.is_finite() {
                check.max_rel_error = if err.is_finite() { err } else { f64::INFINITY };
                check.worst_index = i;
                check.analytic = grad[i];
                check.numeric = numeric;
            }
        }
        check.passed = check.max_rel_error <= cfg.tolerance;
        checks.push(check);
    }
    let passed = checks.iter().all(|c| c.passed);
    Ok(FdReport {
        params: checks,
        passed,
    })
}

/// Builds the loss with `build`, differentiates it, and checks the result
/// against central differences of the same builder.
pub fn check_graph_gradients<B>(build: B, params: &ParamStore, cfg: &FdConfig) -> Result<FdReport>
where
    B: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = build(&mut g, params)?;
    let grads = g.backward(loss)?;
    finite_difference_check(
        |p| {
            let mut g = Graph::new();
            let l = build(&mut g, p)?;
            g.value(l).item()
        },
        params,
        &grads,
        cfg,
    )
}
