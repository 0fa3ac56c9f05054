use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stats::{pearson, quartiles, sign_test, spearman, Quartiles, SignTest};
use super::{train_on, Objective, RunRecord, TrainConfig, TrainFailure};
use crate::data::RenderedDataset;
use crate::error::{Error, Result};
use crate::model::Vae;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub betas: Vec<f64>,
    /// Runs per β, seeded `base.seed`, `base.seed + 1`, ...
    pub seeds: usize,
    /// Concurrent runs; 0 uses every available core.
    pub parallelism: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            betas: vec![1.0, 2.0, 4.0, 6.0, 8.0],
            seeds: 5,
            parallelism: 0,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds == 0 {
            return Err(Error::invalid("a sweep needs at least one seed"));
        }
        if self.betas.is_empty() {
            return Err(Error::invalid("a sweep needs at least one beta"));
        }
        for (i, a) in self.betas.iter().enumerate() {
            if !a.is_finite() || *a < 0.0 {
                return Err(Error::invalid(format!("invalid beta {a}")));
            }
            if self.betas[..i].contains(a) {
                return Err(Error::invalid(format!("beta {a} listed twice")));
            }
        }
        Ok(())
    }

    /// Every run of the sweep, β-major.
    pub fn configs(&self, base: &TrainConfig) -> Vec<TrainConfig> {
        self.betas
            .iter()
            .flat_map(|&beta| {
                (0..self.seeds as u64).map(move |s| {
                    let mut c = base.clone();
                    c.weights.beta = beta;
                    c.seed = base.seed + s;
                    c
                })
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaSummary {
    pub objective: Objective,
    pub beta: f64,
    pub runs: usize,
    pub failures: usize,
    pub elbo: Option<Quartiles>,
    pub total_correlation: Option<Quartiles>,
    pub mig: Option<Quartiles>,
    pub higgins: Option<Quartiles>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub beta: f64,
    pub mean_tc: f64,
    pub mean_mig: f64,
    pub runs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub points: Vec<ScatterPoint>,
    pub pearson: f64,
    pub spearman: f64,
    /// Set when either series is constant; both coefficients are then 0.
    pub undefined: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepResult {
    pub records: Vec<RunRecord>,
    pub per_beta: Vec<BetaSummary>,
    pub correlation: Option<CorrelationReport>,
}

fn run_one(config: &TrainConfig, dataset: &RenderedDataset) -> (RunRecord, Option<Vae>) {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(|| train_on(config, dataset)));
    let wall = start.elapsed().as_secs_f64();
    match outcome {
        Ok(Ok(o)) => (o.record, Some(o.model)),
        Ok(Err(TrainFailure::Diverged(d))) => {
            log::warn!("run seed={} beta={} diverged at step {}", config.seed, config.weights.beta, d.step);
            let mut r = RunRecord::failed(config.clone(), Some(d.step), d.cause.to_string(), wall);
            r.loss_trace = d.loss_trace;
            (r, None)
        }
        Ok(Err(TrainFailure::Error(e))) => {
            log::warn!("run seed={} beta={} failed: {e}", config.seed, config.weights.beta);
            (RunRecord::failed(config.clone(), None, e.to_string(), wall), None)
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            (RunRecord::failed(config.clone(), None, msg, wall), None)
        }
    }
}

fn run_all(
    configs: &[TrainConfig],
    dataset: &RenderedDataset,
    parallelism: usize,
    on_done: &(dyn Fn(&RunRecord, Option<&Vae>) + Sync),
) -> Result<Vec<RunRecord>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| {
        configs
            .par_iter()
            .map(|c| {
                let (record, model) = run_one(c, dataset);
                on_done(&record, model.as_ref());
                record
            })
            .collect()
    }))
}

pub fn summarize(records: &[RunRecord]) -> Vec<BetaSummary> {
    let mut keys: Vec<(Objective, f64)> = Vec::new();
    for r in records {
        let k = (r.config.objective, r.config.weights.beta);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(objective, beta)| {
            let group: Vec<&RunRecord> = records
                .iter()
                .filter(|r| r.config.objective == objective && r.config.weights.beta == beta)
                .collect();
            let col = |f: &dyn Fn(&RunRecord) -> Option<f64>| {
                quartiles(&group.iter().filter_map(|r| f(r)).collect::<Vec<_>>())
            };
            BetaSummary {
                objective,
                beta,
                runs: group.len(),
                failures: group.iter().filter(|r| !r.completed()).count(),
                elbo: col(&|r| r.elbo.as_ref().map(|e| e.elbo)),
                total_correlation: col(&|r| r.total_correlation()),
                mig: col(&|r| r.mig_score()),
                higgins: col(&|r| r.higgins),
            }
        })
        .collect()
}

/// Per-β means of exact TC and MIG over completed runs, and their
/// correlation across β.
pub fn tc_mig_correlation(records: &[RunRecord]) -> Result<CorrelationReport> {
    let mut betas: Vec<f64> = Vec::new();
    for r in records {
        if r.total_correlation().is_some() && r.mig_score().is_some() && !betas.contains(&r.config.weights.beta) {
            betas.push(r.config.weights.beta);
        }
    }
    if betas.len() < 3 {
        return Err(Error::invalid(format!(
            "correlation needs at least 3 distinct beta values with results, got {}",
            betas.len()
        )));
    }
    betas.sort_by(f64::total_cmp);
    let points: Vec<ScatterPoint> = betas
        .iter()
        .map(|&beta| {
            let pairs: Vec<(f64, f64)> = records
                .iter()
                .filter(|r| r.config.weights.beta == beta)
                .filter_map(|r| Some((r.total_correlation()?, r.mig_score()?)))
                .collect();
            let n = pairs.len() as f64;
            ScatterPoint {
                beta,
                mean_tc: pairs.iter().map(|p| p.0).sum::<f64>() / n,
                mean_mig: pairs.iter().map(|p| p.1).sum::<f64>() / n,
                runs: pairs.len(),
            }
        })
        .collect();
    correlate_points(points)
}

/// Pearson and Spearman correlation of per-β mean TC against mean MIG.
pub fn correlate_points(points: Vec<ScatterPoint>) -> Result<CorrelationReport> {
    if points.len() < 3 {
        return Err(Error::invalid(format!(
            "correlation needs at least 3 distinct beta values, got {}",
            points.len()
        )));
    }
    let tc: Vec<f64> = points.iter().map(|p| p.mean_tc).collect();
    let mig: Vec<f64> = points.iter().map(|p| p.mean_mig).collect();
    let (p, s) = (pearson(&tc, &mig), spearman(&tc, &mig));
    Ok(CorrelationReport {
        points,
        pearson: p.unwrap_or(0.0),
        spearman: s.unwrap_or(0.0),
        undefined: p.is_none() || s.is_none(),
    })
}

pub fn sweep(config: &SweepConfig, base: &TrainConfig) -> Result<SweepResult> {
    sweep_with(config, base, &|_, _| {})
}

/// [`sweep`] calling `on_done` as each run finishes, from the worker thread
/// that ran it.
pub fn sweep_with(
    config: &SweepConfig,
    base: &TrainConfig,
    on_done: &(dyn Fn(&RunRecord, Option<&Vae>) + Sync),
) -> Result<SweepResult> {
    config.validate()?;
    base.validate()?;
    let dataset = base.dataset.build()?;
    let records = run_all(&config.configs(base), &dataset, config.parallelism, on_done)?;
    Ok(SweepResult {
        per_beta: summarize(&records),
        correlation: tc_mig_correlation(&records).ok(),
        records,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `objective,beta,seed,status,elbo,tc,mig,higgins`; missing values are empty.
pub fn write_sweep_csv<W: Write>(records: &[RunRecord], mut w: W) -> Result<()> {
    writeln!(w, "objective,beta,seed,status,elbo,tc,mig,higgins")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.config.objective,
            r.config.weights.beta,
            r.config.seed,
            if r.completed() { "ok" } else { "failed" },
            opt(r.elbo.as_ref().map(|e| e.elbo)),
            opt(r.total_correlation()),
            opt(r.mig_score()),
            opt(r.higgins),
        )?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationPair {
    pub seed: u64,
    pub mig_alpha_one: f64,
    pub mig_alpha_zero: f64,
    /// `mig_alpha_zero - mig_alpha_one`.
    pub difference: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationReport {
    pub pairs: Vec<AblationPair>,
    pub differences: Option<Quartiles>,
    pub sign_test: SignTest,
    pub records: Vec<RunRecord>,
}

/// Matched-seed runs with α = 1 and α = 0, everything else from `base`.
pub fn ablate_alpha_zero(base: &TrainConfig, seeds: usize, parallelism: usize) -> Result<AblationReport> {
    if base.objective != Objective::BetaTcvae {
        return Err(Error::invalid("the alpha ablation needs the beta-tcvae objective"));
    }
    if seeds == 0 {
        return Err(Error::invalid("the alpha ablation needs at least one seed"));
    }
    base.validate()?;
    let dataset = base.dataset.build()?;
    let configs: Vec<TrainConfig> = (0..seeds as u64)
        .flat_map(|s| {
            [1.0, 0.0].map(|alpha| {
                let mut c = base.clone();
                c.weights.alpha = alpha;
                c.seed = base.seed + s;
                c
            })
        })
        .collect();
    let records = run_all(&configs, &dataset, parallelism, &|_, _| {})?;
    let pairs: Vec<AblationPair> = records
        .chunks(2)
        .filter_map(|p| {
            let (one, zero) = (p[0].mig_score()?, p[1].mig_score()?);
            Some(AblationPair {
                seed: p[0].config.seed,
                mig_alpha_one: one,
                mig_alpha_zero: zero,
                difference: zero - one,
            })
        })
        .collect();
    let diffs: Vec<f64> = pairs.iter().map(|p| p.difference).collect();
    Ok(AblationReport {
        differences: quartiles(&diffs),
        sign_test: sign_test(&diffs),
        pairs,
        records,
    })
}
