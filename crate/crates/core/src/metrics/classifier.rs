use serde::{Deserialize, Serialize};

use super::code::LatentCode;
use crate::data::RenderedDataset;
use crate::error::{Error, Result};
use crate::numerics::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HigginsConfig {
    /// Pairs averaged into each feature vector.
    #[serde(rename = "L")]
    pub l: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Full-batch gradient steps for the linear classifier.
    pub iterations: usize,
    pub learning_rate: f64,
}

impl Default for HigginsConfig {
    fn default() -> Self {
        Self {
            l: 64,
            n_train: 2000,
            n_test: 1000,
            iterations: 500,
            learning_rate: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KimMnihConfig {
    /// Points per fixed-factor batch.
    #[serde(rename = "L")]
    pub l: usize,
    pub n_train: usize,
    pub n_test: usize,
}

impl Default for KimMnihConfig {
    fn default() -> Self {
        Self {
            l: 64,
            n_train: 800,
            n_test: 400,
        }
    }
}

/// CDFs of `p(n | v_k)` for every factor value.
struct ConditionalSampler {
    slices: Vec<Vec<(Vec<usize>, Vec<f64>)>>,
}

impl ConditionalSampler {
    fn new(dataset: &RenderedDataset) -> Self {
        let table = dataset.factors();
        let slices = (0..table.num_factors())
            .map(|k| {
                (0..table.specs()[k].cardinality())
                    .map(|level| {
                        let c = dataset.conditional_by_level(k, level);
                        let mut acc = 0.0;
                        let cdf = c
                            .weights
                            .iter()
                            .map(|w| {
                                acc += w;
                                acc
                            })
                            .collect();
                        (c.indices, cdf)
                    })
                    .collect()
            })
            .collect();
        Self { slices }
    }

    fn sample(&self, k: usize, level: usize, rng: &mut RngStream) -> usize {
        let (idx, cdf) = &self.slices[k][level];
        let u = rng.uniform() * cdf[cdf.len() - 1];
        idx[cdf.partition_point(|&c| c <= u).min(idx.len() - 1)]
    }
}

fn check(code: &dyn LatentCode, dataset: &RenderedDataset) -> Result<()> {
    if code.len() != dataset.len() {
        return Err(Error::Shape(format!(
            "code covers {} indices, dataset has {}",
            code.len(),
            dataset.len()
        )));
    }
    if dataset.factors().num_factors() < 2 {
        return Err(Error::invalid(
            "classifier metrics need at least two factors to tell apart",
        ));
    }
    Ok(())
}

fn sample_z(code: &dyn LatentCode, n: usize, rng: &mut RngStream) -> Vec<f64> {
    (0..code.latent_dim()).map(|j| code.sample(n, j, rng)).collect()
}

/// One labelled point: `(1/L) Σ |z^(1) − z^(2)|` over pairs sharing `v_k`.
fn higgins_point(
    code: &dyn LatentCode,
    dataset: &RenderedDataset,
    sampler: &ConditionalSampler,
    l: usize,
    rng: &mut RngStream,
) -> (Vec<f64>, usize) {
    let k = rng.below(dataset.factors().num_factors());
    let mut feat = vec![0.0; code.latent_dim()];
    for _ in 0..l {
        let n1 = dataset.sample_index(rng);
        let n2 = sampler.sample(k, dataset.factors().level(n1, k), rng);
        let (z1, z2) = (sample_z(code, n1, rng), sample_z(code, n2, rng));
        for (f, (a, b)) in feat.iter_mut().zip(z1.iter().zip(&z2)) {
            *f += (a - b).abs() / l as f64;
        }
    }
    (feat, k)
}

/// Multiclass logistic regression on standardized features.
struct LinearClassifier {
    shift: Vec<f64>,
    scale: Vec<f64>,
    weight: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl LinearClassifier {
    fn fit(x: &[Vec<f64>], y: &[usize], classes: usize, iterations: usize, lr: f64) -> Self {
        let d = x[0].len();
        let n = x.len() as f64;
        let shift: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let scale: Vec<f64> = (0..d)
            .map(|j| {
                let v = x.iter().map(|r| (r[j] - shift[j]).powi(2)).sum::<f64>() / n;
                if v > 1e-24 {
                    1.0 / v.sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        let mut clf = Self {
            shift,
            scale,
            weight: vec![vec![0.0; classes]; d],
            bias: vec![0.0; classes],
        };
        let xs: Vec<Vec<f64>> = x.iter().map(|r| clf.standardize(r)).collect();
        for _ in 0..iterations {
            let mut gw = vec![vec![0.0; classes]; d];
            let mut gb = vec![0.0; classes];
            for (r, &label) in xs.iter().zip(y) {
                let mut p = clf.logits(r);
                let m = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for v in &mut p {
                    *v = (*v - m).exp();
                    s += *v;
                }
                for (c, v) in p.iter_mut().enumerate() {
                    *v /= s;
                    let err = *v - if c == label { 1.0 } else { 0.0 };
                    gb[c] += err;
                    for (j, &xj) in r.iter().enumerate() {
                        gw[j][c] += err * xj;
                    }
                }
            }
            for c in 0..classes {
                clf.bias[c] -= lr * gb[c] / n;
                for j in 0..d {
                    clf.weight[j][c] -= lr * gw[j][c] / n;
                }
            }
        }
        clf
    }

    fn standardize(&self, r: &[f64]) -> Vec<f64> {
        r.iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) * s)
            .collect()
    }

    fn logits(&self, xs: &[f64]) -> Vec<f64> {
        let mut out = self.bias.clone();
        for (j, &v) in xs.iter().enumerate() {
            for (o, w) in out.iter_mut().zip(&self.weight[j]) {
                *o += v * w;
            }
        }
        out
    }

    fn predict(&self, r: &[f64]) -> usize {
        let l = self.logits(&self.standardize(r));
        (0..l.len()).fold(0, |best, c| if l[c] > l[best] { c } else { best })
    }
}

/// Held-out accuracy of a linear classifier predicting which factor was held
/// fixed from averaged absolute latent differences.
pub fn higgins_metric(
    code: &dyn LatentCode,
    dataset: &RenderedDataset,
    config: &HigginsConfig,
    rng: &RngStream,
) -> Result<f64> {
    check(code, dataset)?;
    if config.l == 0 || config.n_train == 0 || config.n_test == 0 {
        return Err(Error::invalid("L, n_train and n_test must be positive"));
    }
    let sampler = ConditionalSampler::new(dataset);
    let make = |count: usize, mut stream: RngStream| -> (Vec<Vec<f64>>, Vec<usize>) {
        (0..count)
            .map(|_| higgins_point(code, dataset, &sampler, config.l, &mut stream))
            .unzip()
    };
    let (xtr, ytr) = make(config.n_train, rng.split(1));
    let (xte, yte) = make(config.n_test, rng.split(2));
    let clf = LinearClassifier::fit(
        &xtr,
        &ytr,
        dataset.factors().num_factors(),
        config.iterations,
        config.learning_rate,
    );
    let correct = xte
        .iter()
        .zip(&yte)
        .filter(|(x, &y)| clf.predict(x) == y)
        .count();
    Ok(correct as f64 / config.n_test as f64)
}

/// Dataset-wide standard deviation of every latent under `q(z)`.
pub fn latent_stddevs(code: &dyn LatentCode, dataset: &RenderedDataset) -> Vec<f64> {
    let p = dataset.index_probs();
    (0..code.latent_dim())
        .map(|j| {
            let (mut m1, mut m2) = (0.0, 0.0);
            for (n, &pn) in p.iter().enumerate() {
                let (mean, var) = code.moments(n, j);
                m1 += pn * mean;
                m2 += pn * (var + mean * mean);
            }
            (m2 - m1 * m1).max(0.0).sqrt()
        })
        .collect()
}

/// Majority-vote accuracy over `argmin_j Var[z_j / s_j]` for batches with one
/// factor held fixed. Latents with zero overall spread are ignored.
pub fn kim_mnih_metric(
    code: &dyn LatentCode,
    dataset: &RenderedDataset,
    config: &KimMnihConfig,
    rng: &RngStream,
) -> Result<f64> {
    check(code, dataset)?;
    if config.l < 2 || config.n_train == 0 || config.n_test == 0 {
        return Err(Error::invalid("L must be at least 2 and n_train, n_test positive"));
    }
    let std = latent_stddevs(code, dataset);
    let active: Vec<usize> = (0..std.len()).filter(|&j| std[j] > 1e-12).collect();
    if active.is_empty() {
        return Err(Error::invalid("every latent has zero variance over the dataset"));
    }
    if active.len() < std.len() {
        log::warn!("ignoring {} collapsed latents", std.len() - active.len());
    }
    let k_count = dataset.factors().num_factors();
    let sampler = ConditionalSampler::new(dataset);
    let vote = |stream: &mut RngStream| -> (usize, usize) {
        let k = stream.below(k_count);
        let level = dataset.factors().level(dataset.sample_index(stream), k);
        let zs: Vec<Vec<f64>> = (0..config.l)
            .map(|_| sample_z(code, sampler.sample(k, level, stream), stream))
            .collect();
        let l = config.l as f64;
        let mut best = (f64::INFINITY, active[0]);
        for &j in &active {
            let mean = zs.iter().map(|z| z[j]).sum::<f64>() / l;
            let var = zs.iter().map(|z| (z[j] - mean).powi(2)).sum::<f64>() / (l - 1.0);
            let v = var / (std[j] * std[j]);
            if v < best.0 {
                best = (v, j);
            }
        }
        (best.1, k)
    };
    let mut counts = vec![vec![0usize; k_count]; code.latent_dim()];
    let mut train = rng.split(1);
    for _ in 0..config.n_train {
        let (j, k) = vote(&mut train);
        counts[j][k] += 1;
    }
    let classify: Vec<usize> = counts
        .iter()
        .map(|c| (0..k_count).fold(0, |b, k| if c[k] > c[b] { k } else { b }))
        .collect();
    let mut test = rng.split(2);
    let correct = (0..config.n_test)
        .filter(|_| {
            let (j, k) = vote(&mut test);
            classify[j] == k
        })
        .count();
    Ok(correct as f64 / config.n_test as f64)
}
