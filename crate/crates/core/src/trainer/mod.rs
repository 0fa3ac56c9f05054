//! Optimization loop, evaluation of trained models, β sweeps and the
//! statistics reported over them.

mod stats;
mod sweep;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use stats::{pearson, quartiles, sign_test, spearman, Quartiles, SignTest};
pub use sweep::{
    ablate_alpha_zero, correlate_points, sweep, sweep_with, tc_mig_correlation, write_sweep_csv, AblationPair,
    AblationReport, BetaSummary, CorrelationReport, ScatterPoint, SweepConfig, SweepResult, summarize,
};

use crate::data::{DatasetSpec, RenderedDataset};
use crate::decomposition::{
    beta_tcvae_loss, beta_vae_loss, draw_noise, exact_decomposition_weighted,
    DecompositionEstimate, DecompositionWeights, Estimator, Minibatch, EXACT_MIN_SAMPLES,
};
use crate::error::{Error, Result};
use crate::metrics::{compute_mig, higgins_metric, GaussianCode, HigginsConfig, MigConfig, MigReport};
use crate::model::{bernoulli_log_likelihood, DiagonalGaussian, Vae, VaeConfig};
use crate::numerics::{Adam, Graph, RngStream, Tensor};

const TRAIN_STREAM: u64 = 0x7261_696e;
const EVAL_STREAM: u64 = 0x6576_616c;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Objective {
    #[serde(rename = "beta-vae")]
    BetaVae,
    #[default]
    #[serde(rename = "beta-tcvae")]
    BetaTcvae,
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::BetaVae => "beta-vae",
            Objective::BetaTcvae => "beta-tcvae",
        })
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "beta-vae" | "betavae" | "vae" => Ok(Objective::BetaVae),
            "beta-tcvae" | "betatcvae" | "tcvae" => Ok(Objective::BetaTcvae),
            other => Err(Error::invalid(format!(
                "unknown objective {other:?} (expected beta-vae or beta-tcvae)"
            ))),
        }
    }
}

/// What is measured after training. `None` skips a metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Decoder samples per data point for the reconstruction term.
    pub elbo_samples: usize,
    pub decomposition_samples: Option<usize>,
    pub mig: Option<MigConfig>,
    pub higgins: Option<HigginsConfig>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            elbo_samples: 10,
            decomposition_samples: Some(EXACT_MIN_SAMPLES),
            mig: Some(MigConfig::default()),
            higgins: Some(HigginsConfig::default()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub objective: Objective,
    /// For β-VAE only `beta` is used.
    pub weights: DecompositionWeights,
    pub estimator: Estimator,
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    /// Loss is recorded every this many steps, and at the last step.
    pub log_every: usize,
    pub eval: EvalConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::BetaTcvae,
            weights: DecompositionWeights::tcvae(6.0),
            estimator: Estimator::Mws,
            batch_size: 256,
            steps: 10_000,
            learning_rate: 1e-3,
            seed: 0,
            dataset: DatasetSpec::default(),
            hidden: vec![128],
            latent_dim: 6,
            log_every: 100,
            eval: EvalConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if self.objective == Objective::BetaTcvae && self.batch_size < 2 {
            return Err(Error::invalid("beta-tcvae needs batch_size >= 2"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.latent_dim == 0 {
            return Err(Error::invalid("latent_dim must be positive"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid("hidden widths must be positive"));
        }
        if self.log_every == 0 {
            return Err(Error::invalid("log_every must be positive"));
        }
        if let Some(s) = self.eval.decomposition_samples {
            if s < EXACT_MIN_SAMPLES {
                return Err(Error::invalid(format!(
                    "decomposition_samples must be at least {EXACT_MIN_SAMPLES}"
                )));
            }
        }
        Ok(())
    }

    pub fn model_config(&self, dataset: &RenderedDataset) -> VaeConfig {
        VaeConfig {
            input_dim: dataset.pixels(),
            hidden: self.hidden.clone(),
            latent_dim: self.latent_dim,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub step: usize,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Failed { step: Option<usize>, message: String },
}

/// A metric that was not computed, and why.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub metric: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElboEstimate {
    pub elbo: f64,
    pub reconstruction: f64,
    /// Closed-form `Σ_n p(n) KL(q(z|n) || p(z))`.
    pub kl: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: TrainConfig,
    pub status: RunStatus,
    pub loss_trace: Vec<TracePoint>,
    pub final_loss: Option<f64>,
    pub elbo: Option<ElboEstimate>,
    pub decomposition: Option<DecompositionEstimate>,
    pub mig: Option<MigReport>,
    pub higgins: Option<f64>,
    pub skipped: Vec<Skipped>,
    pub wall_time_secs: f64,
}

impl RunRecord {
    pub fn completed(&self) -> bool {
        self.status == RunStatus::Completed
    }

    pub fn mig_score(&self) -> Option<f64> {
        self.mig.as_ref().map(|m| m.mig)
    }

    pub fn total_correlation(&self) -> Option<f64> {
        self.decomposition.as_ref().map(|d| d.total_correlation)
    }

    /// A record for a run that never produced a model.
    pub fn failed(config: TrainConfig, step: Option<usize>, message: String, wall: f64) -> Self {
        Self {
            config,
            status: RunStatus::Failed { step, message },
            loss_trace: Vec::new(),
            final_loss: None,
            elbo: None,
            decomposition: None,
            mig: None,
            higgins: None,
            skipped: Vec::new(),
            wall_time_secs: wall,
        }
    }
}

/// The model in the state it had before the step whose loss or gradient
/// stopped being finite.
#[derive(Debug)]
pub struct Diverged {
    pub step: usize,
    pub last_good: Vae,
    pub loss_trace: Vec<TracePoint>,
    pub cause: Error,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainFailure {
    #[error("training diverged at step {}: {}", .0.step, .0.cause)]
    Diverged(Box<Diverged>),
    #[error(transparent)]
    Error(#[from] Error),
}

pub struct TrainOutcome {
    pub model: Vae,
    pub record: RunRecord,
}

fn draw_batch(dataset: &RenderedDataset, b: usize, rng: &mut RngStream) -> Result<Minibatch> {
    let n = dataset.len();
    if dataset.joint().is_uniform() {
        if b > n {
            return Err(Error::invalid(format!(
                "batch_size {b} exceeds the dataset size {n}"
            )));
        }
        let idx = rng.sample_without_replacement(n, b);
        Ok(Minibatch::uniform(dataset.batch(&idx), n))
    } else {
        let idx: Vec<usize> = (0..b).map(|_| dataset.sample_index(rng)).collect();
        let lp = idx.iter().map(|&i| dataset.index_probs()[i].ln()).collect();
        Ok(Minibatch {
            images: dataset.batch(&idx),
            dataset_size: n,
            log_index_prob: Some(lp),
        })
    }
}

fn step_loss(
    g: &mut Graph,
    model: &Vae,
    config: &TrainConfig,
    batch: &Minibatch,
    eps: &Tensor,
) -> Result<crate::decomposition::LossOutput> {
    match config.objective {
        Objective::BetaTcvae => beta_tcvae_loss(
            g,
            model,
            model.params(),
            batch,
            config.weights,
            config.estimator,
            eps,
        ),
        Objective::BetaVae => beta_vae_loss(g, model, model.params(), batch, config.weights.beta, eps),
    }
}

/// Runs Adam for `config.steps` steps on `dataset`. Deterministic in
/// `config.seed`.
pub fn fit(
    config: &TrainConfig,
    dataset: &RenderedDataset,
) -> std::result::Result<(Vae, Vec<TracePoint>), TrainFailure> {
    config.validate()?;
    if config.objective == Objective::BetaTcvae
        && config.estimator == Estimator::Mss
        && !dataset.joint().is_uniform()
    {
        return Err(Error::invalid("the mss estimator needs a uniform index distribution").into());
    }
    let mut model = Vae::new(config.model_config(dataset), config.seed)?;
    let adam = Adam {
        lr: config.learning_rate,
        ..Adam::default()
    };
    let mut rng = RngStream::new(config.seed).split(TRAIN_STREAM);
    let mut trace = Vec::new();
    let mut last_good = model.params().clone();
    for step in 0..config.steps {
        let batch = draw_batch(dataset, config.batch_size, &mut rng)?;
        let eps = draw_noise(&mut rng, batch.len(), config.latent_dim);
        let mut g = Graph::new();
        let out = step_loss(&mut g, &model, config, &batch, &eps)?;
        let grads = if out.terms.loss.is_finite() {
            g.backward(out.loss)
        } else {
            Err(Error::NonFiniteLoss { step })
        };
        let grads = match grads {
            Ok(grads) => grads,
            Err(cause @ (Error::NonFiniteLoss { .. } | Error::NonFiniteGradient { .. })) => {
                *model.params_mut() = last_good;
                return Err(TrainFailure::Diverged(Box::new(Diverged {
                    step,
                    last_good: model,
                    loss_trace: trace,
                    cause,
                })));
            }
            Err(e) => return Err(e.into()),
        };
        last_good.clone_from(model.params());
        let params = model.params_mut();
        params.zero_grad();
        params.accumulate(&grads);
        adam.step(params)?;
        if step % config.log_every == 0 || step + 1 == config.steps {
            trace.push(TracePoint {
                step,
                loss: out.terms.loss,
            });
        }
    }
    Ok((model, trace))
}

/// ELBO with the closed-form KL and a Monte Carlo reconstruction term,
/// weighted by `p(n)`.
pub fn evaluate_elbo(
    model: &Vae,
    dataset: &RenderedDataset,
    samples: usize,
    rng: &RngStream,
) -> Result<ElboEstimate> {
    if samples == 0 {
        return Err(Error::invalid("elbo_samples must be positive"));
    }
    let posteriors = model.encode_batch(dataset.images())?;
    let p = dataset.index_probs();
    let kl: f64 = posteriors
        .iter()
        .zip(p)
        .map(|(q, w)| w * q.kl_to_standard_normal())
        .sum();
    let n = dataset.len();
    let j = model.latent_dim();
    let mut per_point = vec![Vec::with_capacity(samples); n];
    for s in 0..samples {
        let mut stream = rng.split(s as u64);
        let eps = stream.gaussian(&[n, j]);
        let z = reparameterize_all(&posteriors, &eps);
        let logits = model.decode_logits_batch(&z)?;
        for (i, row) in per_point.iter_mut().enumerate() {
            row.push(bernoulli_log_likelihood(logits.row(i), dataset.image(i))?);
        }
    }
    let mut recon = 0.0;
    let mut var = 0.0;
    for (row, &w) in per_point.iter().zip(p) {
        let m = row.iter().sum::<f64>() / samples as f64;
        recon += w * m;
        if samples > 1 {
            let v = row.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (samples - 1) as f64;
            var += w * w * v / samples as f64;
        }
    }
    Ok(ElboEstimate {
        elbo: recon - kl,
        reconstruction: recon,
        kl,
        stderr: var.sqrt(),
    })
}

fn reparameterize_all(posteriors: &[DiagonalGaussian], eps: &Tensor) -> Tensor {
    let j = eps.cols();
    let mut z = eps.clone();
    for (i, q) in posteriors.iter().enumerate() {
        let row = &mut z.data_mut()[i * j..(i + 1) * j];
        for (k, v) in row.iter_mut().enumerate() {
            *v = q.mean[k] + (0.5 * q.log_variance[k]).exp() * *v;
        }
    }
    z
}

/// Fills the evaluation fields of `record` for a trained `model`.
pub fn evaluate(
    model: &Vae,
    dataset: &RenderedDataset,
    config: &TrainConfig,
    record: &mut RunRecord,
) -> Result<()> {
    let rng = RngStream::new(config.seed).split(EVAL_STREAM);
    let eval = &config.eval;
    record.elbo = Some(evaluate_elbo(model, dataset, eval.elbo_samples, &rng.split(0))?);
    let posteriors = model.encode_batch(dataset.images())?;
    let skip = |record: &mut RunRecord, metric: &str| {
        record.skipped.push(Skipped {
            metric: metric.into(),
            reason: "disabled in the evaluation config".into(),
        })
    };
    match eval.decomposition_samples {
        Some(s) => {
            record.decomposition = Some(exact_decomposition_weighted(
                &posteriors,
                dataset.index_probs(),
                &rng.split(1),
                s,
            )?)
        }
        None => skip(record, "decomposition"),
    }
    let code = GaussianCode::new(&posteriors)?;
    match &eval.mig {
        Some(c) if config.latent_dim >= 2 => {
            record.mig = Some(compute_mig(&code, dataset, &rng.split(2), c)?)
        }
        Some(_) => record.skipped.push(Skipped {
            metric: "mig".into(),
            reason: "needs at least two latents".into(),
        }),
        None => skip(record, "mig"),
    }
    match &eval.higgins {
        Some(_) if dataset.factors().num_factors() < 2 => record.skipped.push(Skipped {
            metric: "higgins".into(),
            reason: "needs at least two factors".into(),
        }),
        Some(c) => record.higgins = Some(higgins_metric(&code, dataset, c, &rng.split(3))?),
        None => skip(record, "higgins"),
    }
    Ok(())
}

/// Trains and evaluates one run.
pub fn train(config: &TrainConfig) -> std::result::Result<TrainOutcome, TrainFailure> {
    let dataset = config.dataset.build()?;
    train_on(config, &dataset)
}

/// [`train`] on an already built dataset.
pub fn train_on(
    config: &TrainConfig,
    dataset: &RenderedDataset,
) -> std::result::Result<TrainOutcome, TrainFailure> {
    let start = Instant::now();
    let (model, trace) = fit(config, dataset)?;
    let mut record = RunRecord {
        config: config.clone(),
        status: RunStatus::Completed,
        final_loss: trace.last().map(|t| t.loss),
        loss_trace: trace,
        elbo: None,
        decomposition: None,
        mig: None,
        higgins: None,
        skipped: Vec::new(),
        wall_time_secs: 0.0,
    };
    evaluate(&model, dataset, config, &mut record)?;
    record.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(TrainOutcome { model, record })
}
