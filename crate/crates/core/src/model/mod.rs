//! Encoder/decoder networks and the diagonal-Gaussian posterior.

mod checkpoint;
mod gaussian;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use gaussian::{prior_log_density, DiagonalGaussian, LatentSample};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{softplus, Graph, ParamId, ParamStore, RngStream, Tensor, Var};

/// Log-variance outputs are clamped to this range before use.
pub const LOG_VAR_CLAMP: (f64, f64) = (-15.0, 15.0);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub input_dim: usize,
    /// Hidden widths of the encoder; the decoder mirrors them.
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            input_dim: 256,
            hidden: vec![128],
            latent_dim: 6,
        }
    }
}

impl VaeConfig {
    pub fn encoder_dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim];
        d.extend(&self.hidden);
        d.push(2 * self.latent_dim);
        d
    }

    pub fn decoder_dims(&self) -> Vec<usize> {
        let mut d = vec![self.latent_dim];
        d.extend(self.hidden.iter().rev());
        d.push(self.input_dim);
        d
    }
}

#[derive(Clone, Debug)]
struct Dense {
    weight: ParamId,
    bias: ParamId,
}

/// Tanh MLP encoder and decoder sharing one parameter store.
#[derive(Clone, Debug)]
pub struct Vae {
    config: VaeConfig,
    seed: u64,
    params: ParamStore,
    encoder: Vec<Dense>,
    decoder: Vec<Dense>,
}

fn add_layers(
    store: &mut ParamStore,
    prefix: &str,
    dims: &[usize],
    rng: &mut RngStream,
) -> Vec<Dense> {
    dims.windows(2)
        .enumerate()
        .map(|(i, w)| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
            let mut weight = rng.gaussian(&[fan_in, fan_out]);
            weight.data_mut().iter_mut().for_each(|v| *v *= std);
            Dense {
                weight: store.add(format!("{prefix}.{i}.weight"), weight),
                bias: store.add(format!("{prefix}.{i}.bias"), Tensor::zeros(&[fan_out])),
            }
        })
        .collect()
}

impl Vae {
    /// Builds a model with Glorot-normal weights and zero biases.
    pub fn new(config: VaeConfig, seed: u64) -> Result<Self> {
        if config.input_dim == 0 || config.latent_dim == 0 || config.hidden.contains(&0) {
            return Err(Error::invalid(format!("degenerate architecture {config:?}")));
        }
        let mut rng = RngStream::new(seed).split(0x1417);
        let mut params = ParamStore::new();
        let encoder = add_layers(&mut params, "encoder", &config.encoder_dims(), &mut rng);
        let decoder = add_layers(&mut params, "decoder", &config.decoder_dims(), &mut rng);
        Ok(Self {
            config,
            seed,
            params,
            encoder,
            decoder,
        })
    }

    pub fn config(&self) -> &VaeConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Zeroes the encoder output layer so every posterior is `N(0, I)`.
    pub fn zero_encoder_output(&mut self) {
        if let Some(last) = self.encoder.last() {
            self.params.value_mut(last.weight).data_mut().fill(0.0);
            self.params.value_mut(last.bias).data_mut().fill(0.0);
        }
    }

    fn mlp(&self, g: &mut Graph, layers: &[Dense], params: &ParamStore, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in layers.iter().enumerate() {
            let w = g.param(params, layer.weight);
            let b = g.param(params, layer.bias);
            let lin = g.matmul(h, w)?;
            h = g.add_bias(lin, b)?;
            if i + 1 < layers.len() {
                h = g.tanh(h);
            }
        }
        Ok(h)
    }

    /// Encoder forward pass on the tape: returns `(mean, clamped log-variance)`,
    /// each `B x J`.
    pub fn encode_graph(&self, g: &mut Graph, params: &ParamStore, x: Var) -> Result<(Var, Var)> {
        let xv = g.value(x);
        if xv.rank() != 2 || xv.cols() != self.config.input_dim {
            return Err(Error::Shape(format!(
                "encoder expects B x {}, got {:?}",
                self.config.input_dim,
                xv.shape()
            )));
        }
        let out = self.mlp(g, &self.encoder, params, x)?;
        let j = self.config.latent_dim;
        let mean = g.slice_cols(out, 0, j)?;
        let raw = g.slice_cols(out, j, 2 * j)?;
        let log_var = g.clamp(raw, LOG_VAR_CLAMP.0, LOG_VAR_CLAMP.1);
        Ok((mean, log_var))
    }

    /// Decoder forward pass on the tape: `B x J` latents to `B x P` logits.
    pub fn decode_graph(&self, g: &mut Graph, params: &ParamStore, z: Var) -> Result<Var> {
        let zv = g.value(z);
        if zv.rank() != 2 || zv.cols() != self.config.latent_dim {
            return Err(Error::Shape(format!(
                "decoder expects B x {}, got {:?}",
                self.config.latent_dim,
                zv.shape()
            )));
        }
        self.mlp(g, &self.decoder, params, z)
    }

    /// Posterior for a batch of images (`B x P`).
    pub fn encode_batch(&self, x: &Tensor) -> Result<Vec<DiagonalGaussian>> {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let (mean, log_var) = self.encode_graph(&mut g, &self.params, xv)?;
        let (m, l) = (g.value(mean), g.value(log_var));
        (0..m.rows())
            .map(|i| DiagonalGaussian::new(m.row(i).to_vec(), l.row(i).to_vec()))
            .collect()
    }

    pub fn encode(&self, x: &[f64]) -> Result<DiagonalGaussian> {
        let t = Tensor::new(vec![1, x.len()], x.to_vec())?;
        Ok(self.encode_batch(&t)?.remove(0))
    }

    /// Decoder logits for a batch of latents (`B x J`).
    pub fn decode_logits_batch(&self, z: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let zv = g.input(z.clone());
        let out = self.decode_graph(&mut g, &self.params, zv)?;
        Ok(g.value(out).clone())
    }

    pub fn decode_logits(&self, z: &[f64]) -> Result<Vec<f64>> {
        let t = Tensor::new(vec![1, z.len()], z.to_vec())?;
        Ok(self.decode_logits_batch(&t)?.into_data())
    }

    /// `log p(x | z)` under the Bernoulli decoder.
    pub fn decode_log_likelihood(&self, z: &[f64], x: &[f64]) -> Result<f64> {
        let logits = self.decode_logits(z)?;
        bernoulli_log_likelihood(&logits, x)
    }
}

/// `Σ [x log σ(l) + (1 - x) log(1 - σ(l))]` in the stable form `x l - softplus(l)`.
pub fn bernoulli_log_likelihood(logits: &[f64], x: &[f64]) -> Result<f64> {
    if logits.len() != x.len() {
        return Err(Error::Shape(format!(
            "{} logits for {} pixels",
            logits.len(),
            x.len()
        )));
    }
    if let Some(v) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid(format!("pixel value {v} outside [0, 1]")));
    }
    Ok(logits
        .iter()
        .zip(x)
        .map(|(&l, &x)| x * l - softplus(l))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Vae {
        Vae::new(
            VaeConfig {
                input_dim: 9,
                hidden: vec![5],
                latent_dim: 2,
            },
            3,
        )
        .unwrap()
    }

    #[test]
    fn layer_widths() {
        let c = VaeConfig::default();
        assert_eq!(c.encoder_dims(), vec![256, 128, 12]);
        assert_eq!(c.decoder_dims(), vec![6, 128, 256]);
    }

    #[test]
    fn zero_output_layer_gives_prior() {
        let mut vae = small();
        vae.zero_encoder_output();
        for k in 0..4 {
            let x: Vec<f64> = (0..9).map(|i| ((i + k) % 3) as f64 / 2.0).collect();
            let q = vae.encode(&x).unwrap();
            assert_eq!(q, DiagonalGaussian::standard(2));
        }
    }

    #[test]
    fn encode_is_pure() {
        let vae = small();
        let x = vec![0.1, 0.9, 0.5, 0.0, 1.0, 0.3, 0.7, 0.2, 0.6];
        assert_eq!(vae.encode(&x).unwrap(), vae.encode(&x).unwrap());
    }

    #[test]
    fn encode_rejects_wrong_width() {
        let vae = small();
        assert!(vae.encode(&[0.0; 4]).is_err());
    }

    #[test]
    fn zero_logits_give_minus_p_ln2() {
        let x = [0.0, 0.3, 1.0, 0.5];
        let ll = bernoulli_log_likelihood(&[0.0; 4], &x).unwrap();
        assert!((ll + 4.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let logits = [30.0, -30.0, 30.0, -30.0];
        let x: Vec<f64> = logits.iter().map(|&l| crate::numerics::sigmoid(l)).collect();
        let ll = bernoulli_log_likelihood(&logits, &x).unwrap();
        assert!(ll.is_finite());
        let ll = bernoulli_log_likelihood(&[800.0, -800.0], &[0.0, 1.0]).unwrap();
        assert!(ll.is_finite());
    }

    #[test]
    fn pixels_outside_unit_interval_rejected() {
        assert!(bernoulli_log_likelihood(&[0.0], &[1.5]).is_err());
        assert!(bernoulli_log_likelihood(&[0.0], &[-0.1]).is_err());
    }

    #[test]
    fn same_seed_same_weights() {
        assert_eq!(small().params().flatten(), small().params().flatten());
    }
}
