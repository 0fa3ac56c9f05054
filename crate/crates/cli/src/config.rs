//! Flat `key = value` experiment files. `#` starts a comment.

use std::fmt;

use disentangle_core::data::DatasetSpec;
use disentangle_core::decomposition::Estimator;
use disentangle_core::metrics::{HigginsConfig, MigConfig};
use disentangle_core::trainer::{Objective, SweepConfig, TrainConfig};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub sweep: SweepConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: usize,
    pub key: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.key {
            Some(k) => write!(f, "line {}: key `{k}`: {}", self.line, self.message),
            None => write!(f, "line {}: {}", self.line, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

pub const KEYS: &[&str] = &[
    "objective",
    "alpha",
    "beta",
    "gamma",
    "estimator",
    "batch_size",
    "steps",
    "learning_rate",
    "seed",
    "dataset",
    "hidden",
    "latent_dim",
    "log_every",
    "elbo_samples",
    "decomposition_samples",
    "mig_samples_per_value",
    "higgins_l",
    "higgins_train",
    "higgins_test",
    "higgins_iterations",
    "betas",
    "seeds",
    "parallelism",
];

fn num<T: std::str::FromStr>(v: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("invalid value {v:?}: {e}"))
}

fn list<T: std::str::FromStr>(v: &str) -> Result<Vec<T>, String>
where
    T::Err: fmt::Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(num)
        .collect()
}

/// `off` (or `none`) disables an optional evaluation step.
fn optional(v: &str) -> Option<&str> {
    match v.to_ascii_lowercase().as_str() {
        "off" | "none" | "false" => None,
        _ => Some(v),
    }
}

fn higgins(c: &mut TrainConfig) -> &mut HigginsConfig {
    c.eval.higgins.get_or_insert_with(HigginsConfig::default)
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        let mut seen: Vec<String> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError {
                    line,
                    key: None,
                    message: format!("expected `key = value`, got {content:?}"),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            let err = |message: String| ConfigError {
                line,
                key: Some(key.to_string()),
                message,
            };
            if !KEYS.contains(&key) {
                return Err(err("unknown key".into()));
            }
            if seen.iter().any(|k| k == key) {
                return Err(err("set more than once".into()));
            }
            seen.push(key.to_string());
            cfg.set(key, value).map_err(err)?;
        }
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        let t = &mut self.train;
        match key {
            "objective" => t.objective = v.parse::<Objective>().map_err(|e| e.to_string())?,
            "alpha" => t.weights.alpha = num(v)?,
            "beta" => t.weights.beta = num(v)?,
            "gamma" => t.weights.gamma = num(v)?,
            "estimator" => t.estimator = v.parse::<Estimator>().map_err(|e| e.to_string())?,
            "batch_size" => t.batch_size = num(v)?,
            "steps" => t.steps = num(v)?,
            "learning_rate" => t.learning_rate = num(v)?,
            "seed" => t.seed = num(v)?,
            "dataset" => t.dataset = v.parse::<DatasetSpec>().map_err(|e| e.to_string())?,
            "hidden" => t.hidden = list(v)?,
            "latent_dim" => t.latent_dim = num(v)?,
            "log_every" => t.log_every = num(v)?,
            "elbo_samples" => t.eval.elbo_samples = num(v)?,
            "decomposition_samples" => {
                t.eval.decomposition_samples = optional(v).map(num).transpose()?
            }
            "mig_samples_per_value" => {
                t.eval.mig = optional(v)
                    .map(|s| num(s).map(|samples_per_value| MigConfig { samples_per_value }))
                    .transpose()?
            }
            "higgins_l" => match optional(v) {
                Some(s) => higgins(t).l = num(s)?,
                None => t.eval.higgins = None,
            },
            "higgins_train" => higgins(t).n_train = num(v)?,
            "higgins_test" => higgins(t).n_test = num(v)?,
            "higgins_iterations" => higgins(t).iterations = num(v)?,
            "betas" => self.sweep.betas = list(v)?,
            "seeds" => self.sweep.seeds = num(v)?,
            "parallelism" => self.sweep.parallelism = num(v)?,
            _ => unreachable!("key list checked by the caller"),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_known_keys() {
        let c = ExperimentConfig::parse(
            "# comment\nobjective = beta-vae\nbeta=4 # trailing\nhidden = 64, 32\n\nbetas = 1,2,4\nmig_samples_per_value = off\n",
        )
        .unwrap();
        assert_eq!(c.train.objective, Objective::BetaVae);
        assert_eq!(c.train.weights.beta, 4.0);
        assert_eq!(c.train.hidden, vec![64, 32]);
        assert_eq!(c.sweep.betas, vec![1.0, 2.0, 4.0]);
        assert!(c.train.eval.mig.is_none());
    }

    #[test]
    fn unknown_key_names_line_and_key() {
        let e = ExperimentConfig::parse("steps = 5\nlearning_rat = 0.1\n").unwrap_err();
        assert_eq!(e.line, 2);
        assert_eq!(e.key.as_deref(), Some("learning_rat"));
        assert!(e.to_string().contains("line 2"));
    }

    #[test]
    fn bad_values_and_lines_rejected() {
        assert_eq!(ExperimentConfig::parse("steps = many").unwrap_err().line, 1);
        assert_eq!(ExperimentConfig::parse("\n\nsteps").unwrap_err().line, 3);
        assert_eq!(ExperimentConfig::parse("seed=1\nseed=2").unwrap_err().line, 2);
        assert!(ExperimentConfig::parse("dataset = mnist").is_err());
    }

    #[test]
    fn every_key_is_accepted() {
        for k in KEYS {
            let v = match *k {
                "objective" => "beta-tcvae",
                "estimator" => "mss",
                "dataset" => "pose-b",
                "hidden" | "betas" => "1,2",
                "learning_rate" | "alpha" | "beta" | "gamma" => "0.5",
                "decomposition_samples" => "20000",
                _ => "3",
            };
            ExperimentConfig::parse(&format!("{k} = {v}")).unwrap();
        }
    }
}
