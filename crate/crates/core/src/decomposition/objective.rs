//! β-VAE and β-TCVAE training objectives on the differentiation tape.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Vae;
use crate::numerics::{Graph, ParamStore, RngStream, Tensor, Var, LN_2PI};

use super::minibatch::{mss_log_weights, mws_log_weights, Estimator};

/// Weights on index-code MI, total correlation and dimension-wise KL.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl DecompositionWeights {
    /// `α = γ = 1`, TC weighted by `beta`.
    pub fn tcvae(beta: f64) -> Self {
        Self {
            alpha: 1.0,
            beta,
            gamma: 1.0,
        }
    }

    pub fn elbo() -> Self {
        Self::tcvae(1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if [self.alpha, self.beta, self.gamma].iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::invalid(format!("non-finite decomposition weights {self:?}")))
        }
    }
}

/// A minibatch of images with what the estimators need to know about the
/// dataset it came from.
#[derive(Clone, Debug)]
pub struct Minibatch {
    /// `B x P` images.
    pub images: Tensor,
    pub dataset_size: usize,
    /// `log p(n_i)` per row when the index distribution is not uniform.
    pub log_index_prob: Option<Vec<f64>>,
}

impl Minibatch {
    pub fn uniform(images: Tensor, dataset_size: usize) -> Self {
        Self {
            images,
            dataset_size,
            log_index_prob: None,
        }
    }

    pub fn len(&self) -> usize {
        self.images.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn estimator_weights(&self, estimator: Estimator) -> Result<Tensor> {
        let b = self.len();
        match estimator {
            Estimator::Mws => {
                let lp = self
                    .log_index_prob
                    .clone()
                    .unwrap_or_else(|| vec![-(self.dataset_size as f64).ln(); b]);
                mws_log_weights(self.dataset_size, &lp)
            }
            Estimator::Mss => {
                if self.log_index_prob.is_some() {
                    return Err(Error::invalid(
                        "stratified sampling requires a uniform index distribution",
                    ));
                }
                mss_log_weights(b, self.dataset_size)
            }
        }
    }
}

/// Batch means of every term that enters the objectives (nats).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub loss: f64,
    /// `E[log p(x|z)]`
    pub reconstruction: f64,
    /// `E[log q(z|n)]`
    pub log_q_z_given_n: f64,
    /// `E[log q̂(z)]`
    pub log_q_z: f64,
    /// `Σ_j E[log q̂(z_j)]`
    pub log_prod_q_zj: f64,
    /// `E[log p(z)]`
    pub log_p_z: f64,
    pub index_code_mi: f64,
    pub total_correlation: f64,
    pub dimension_wise_kl: f64,
    /// Closed-form `E[KL(q(z|x) || p(z))]`.
    pub analytic_kl: f64,
}

pub struct LossOutput {
    pub loss: Var,
    pub terms: LossTerms,
}

struct Forward {
    mean: Var,
    log_var: Var,
    z: Var,
    recon: Var,
}

fn forward(g: &mut Graph, model: &Vae, params: &ParamStore, batch: &Minibatch, eps: &Tensor) -> Result<Forward> {
    let x = g.input(batch.images.clone());
    let (mean, log_var) = model.encode_graph(g, params, x)?;
    if g.value(mean).shape() != eps.shape() {
        return Err(Error::Shape(format!(
            "noise {:?} for latents {:?}",
            eps.shape(),
            g.value(mean).shape()
        )));
    }
    let half = g.scale(log_var, 0.5);
    let std = g.exp(half);
    let e = g.input(eps.clone());
    let noise = g.mul(std, e)?;
    let z = g.add(mean, noise)?;
    let logits = model.decode_graph(g, params, z)?;
    let recon = g.bernoulli_log_likelihood(logits, x)?;
    Ok(Forward {
        mean,
        log_var,
        z,
        recon,
    })
}

fn analytic_kl(g: &Graph, f: &Forward) -> f64 {
    let (m, l) = (g.value(f.mean), g.value(f.log_var));
    let total: f64 = m
        .data()
        .iter()
        .zip(l.data())
        .map(|(&m, &l)| 0.5 * (m * m + l.exp() - l - 1.0))
        .sum();
    total / m.rows() as f64
}

/// Draws the reparameterization noise for a batch.
pub fn draw_noise(rng: &mut RngStream, batch: usize, latent_dim: usize) -> Tensor {
    rng.gaussian(&[batch, latent_dim])
}

/// Negative weighted-decomposition objective
/// `-(E log p(x|z) - α·MI - β·TC - γ·dwKL)` with `q(z)` and `q(z_j)` from the
/// chosen minibatch estimator. `eps` is the `B x J` reparameterization noise.
pub fn beta_tcvae_loss(
    g: &mut Graph,
    model: &Vae,
    params: &ParamStore,
    batch: &Minibatch,
    weights: DecompositionWeights,
    estimator: Estimator,
    eps: &Tensor,
) -> Result<LossOutput> {
    weights.validate()?;
    if batch.len() < 2 {
        return Err(Error::invalid("the decomposition estimators need a batch of at least 2"));
    }
    let log_w = batch.estimator_weights(estimator)?;
    let f = forward(g, model, params, batch, eps)?;

    // log q(z_i | n_i), elementwise then summed over latents
    let diff = g.sub(f.z, f.mean)?;
    let sq = g.square(diff);
    let neg_lv = g.scale(f.log_var, -1.0);
    let inv_var = g.exp(neg_lv);
    let maha = g.mul(sq, inv_var)?;
    let inner = g.add(maha, f.log_var)?;
    let inner = g.add_scalar(inner, LN_2PI);
    let own = g.scale(inner, -0.5);
    let log_q_zn = g.sum_last_axis(own);

    // log p(z_i)
    let z_sq = g.square(f.z);
    let prior = g.add_scalar(z_sq, LN_2PI);
    let prior = g.scale(prior, -0.5);
    let log_pz = g.sum_last_axis(prior);

    let cube = g.pairwise_gaussian_log_density(f.z, f.mean, f.log_var)?;
    let joint = g.sum_last_axis(cube);
    let log_qz = g.logsumexp_pairs(joint, Some(log_w.clone()))?;
    let marginals = g.logsumexp_pairs(cube, Some(log_w))?;
    let log_prod = g.sum_last_axis(marginals);

    let mi_rows = g.sub(log_q_zn, log_qz)?;
    let tc_rows = g.sub(log_qz, log_prod)?;
    let dw_rows = g.sub(log_prod, log_pz)?;
    let recon = g.mean(f.recon);
    let mi = g.mean(mi_rows);
    let tc = g.mean(tc_rows);
    let dw = g.mean(dw_rows);

    let a = g.scale(mi, weights.alpha);
    let b = g.scale(tc, weights.beta);
    let c = g.scale(dw, weights.gamma);
    let penalty = g.add(a, b)?;
    let penalty = g.add(penalty, c)?;
    let neg_recon = g.scale(recon, -1.0);
    let loss = g.add(neg_recon, penalty)?;

    let mean_of = |v: Var| {
        let t = g.value(v);
        t.sum() / t.len() as f64
    };
    let terms = LossTerms {
        loss: g.value(loss).item()?,
        reconstruction: g.value(recon).item()?,
        log_q_z_given_n: mean_of(log_q_zn),
        log_q_z: mean_of(log_qz),
        log_prod_q_zj: mean_of(log_prod),
        log_p_z: mean_of(log_pz),
        index_code_mi: g.value(mi).item()?,
        total_correlation: g.value(tc).item()?,
        dimension_wise_kl: g.value(dw).item()?,
        analytic_kl: analytic_kl(g, &f),
    };
    Ok(LossOutput { loss, terms })
}

/// Negative β-VAE objective `-(E log p(x|z) - β·KL(q(z|x) || p(z)))` with the
/// closed-form KL, averaged over the batch.
pub fn beta_vae_loss(
    g: &mut Graph,
    model: &Vae,
    params: &ParamStore,
    batch: &Minibatch,
    beta: f64,
    eps: &Tensor,
) -> Result<LossOutput> {
    if !beta.is_finite() {
        return Err(Error::invalid(format!("non-finite beta {beta}")));
    }
    if batch.is_empty() {
        return Err(Error::Empty("beta-VAE loss on an empty batch"));
    }
    let f = forward(g, model, params, batch, eps)?;
    // KL = 0.5 Σ (μ² + e^{lv} - lv - 1)
    let m2 = g.square(f.mean);
    let var = g.exp(f.log_var);
    let s = g.add(m2, var)?;
    let s = g.sub(s, f.log_var)?;
    let s = g.add_scalar(s, -1.0);
    let kl_rows = g.sum_last_axis(s);
    let kl_rows = g.scale(kl_rows, 0.5);
    let kl = g.mean(kl_rows);
    let recon = g.mean(f.recon);
    let pen = g.scale(kl, beta);
    let neg_recon = g.scale(recon, -1.0);
    let loss = g.add(neg_recon, pen)?;
    let kl_value = g.value(kl).item()?;
    let terms = LossTerms {
        loss: g.value(loss).item()?,
        reconstruction: g.value(recon).item()?,
        analytic_kl: kl_value,
        ..LossTerms::default()
    };
    Ok(LossOutput { loss, terms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::VaeConfig;

    fn setup(b: usize) -> (Vae, Minibatch, Tensor) {
        let vae = Vae::new(
            VaeConfig {
                input_dim: 8,
                hidden: vec![6],
                latent_dim: 3,
            },
            12,
        )
        .unwrap();
        let mut r = RngStream::new(13);
        let imgs: Vec<f64> = (0..b * 8).map(|_| r.uniform()).collect();
        let batch = Minibatch::uniform(Tensor::new(vec![b, 8], imgs).unwrap(), 40);
        let eps = draw_noise(&mut r, b, 3);
        (vae, batch, eps)
    }

    #[test]
    fn unit_weights_give_negative_elbo_estimate() {
        let (vae, batch, eps) = setup(6);
        for est in [Estimator::Mws, Estimator::Mss] {
            let mut g = Graph::new();
            let out = beta_tcvae_loss(&mut g, &vae, vae.params(), &batch, DecompositionWeights::elbo(), est, &eps).unwrap();
            let t = out.terms;
            let elbo = t.reconstruction - (t.log_q_z_given_n - t.log_p_z);
            assert!((t.loss + elbo).abs() < 1e-10, "{est}: {} vs {}", t.loss, -elbo);
        }
    }

    #[test]
    fn beta_one_vae_is_negative_elbo() {
        let (vae, batch, eps) = setup(4);
        let mut g = Graph::new();
        let t = beta_vae_loss(&mut g, &vae, vae.params(), &batch, 1.0, &eps).unwrap().terms;
        assert!((t.loss - (-t.reconstruction + t.analytic_kl)).abs() < 1e-12);
        let mut g = Graph::new();
        let t0 = beta_vae_loss(&mut g, &vae, vae.params(), &batch, 0.0, &eps).unwrap().terms;
        assert!((t0.loss + t0.reconstruction).abs() < 1e-12);
    }

    #[test]
    fn alpha_zero_drops_index_code_term() {
        let (vae, batch, eps) = setup(5);
        let mut g = Graph::new();
        let w = DecompositionWeights { alpha: 0.0, beta: 3.0, gamma: 1.0 };
        let t = beta_tcvae_loss(&mut g, &vae, vae.params(), &batch, w, Estimator::Mws, &eps).unwrap().terms;
        let expected = -t.reconstruction + 3.0 * t.total_correlation + t.dimension_wise_kl;
        assert!((t.loss - expected).abs() < 1e-10);
    }

    #[test]
    fn penalty_scales_linearly_with_weights() {
        let (vae, batch, eps) = setup(5);
        let w = DecompositionWeights { alpha: 0.7, beta: 2.5, gamma: 1.3 };
        let run = |w: DecompositionWeights| {
            let mut g = Graph::new();
            beta_tcvae_loss(&mut g, &vae, vae.params(), &batch, w, Estimator::Mss, &eps).unwrap().terms
        };
        let base = run(w);
        let scaled = run(DecompositionWeights { alpha: 3.0 * w.alpha, beta: 3.0 * w.beta, gamma: 3.0 * w.gamma });
        assert_eq!(base.reconstruction, scaled.reconstruction);
        let pen = base.loss + base.reconstruction;
        let pen3 = scaled.loss + scaled.reconstruction;
        assert!((pen3 - 3.0 * pen).abs() < 1e-9 * pen.abs().max(1.0));
    }

    #[test]
    fn rejects_tiny_batch_and_bad_noise() {
        let (vae, batch, eps) = setup(1);
        let mut g = Graph::new();
        assert!(beta_tcvae_loss(&mut g, &vae, vae.params(), &batch, DecompositionWeights::elbo(), Estimator::Mws, &eps).is_err());
        let (vae, batch, _) = setup(3);
        let bad = Tensor::zeros(&[3, 2]);
        let mut g = Graph::new();
        assert!(beta_vae_loss(&mut g, &vae, vae.params(), &batch, 1.0, &bad).is_err());
    }
}
