use disentangle_core::decomposition::{
    average_posterior_kl, beta_tcvae_loss, beta_vae_loss, draw_noise, exact_aggregated_posterior_logdensity,
    exact_decomposition, exact_decomposition_weighted, mss_log_qz, DecompositionWeights, Estimator, Minibatch,
    MinibatchLatents,
};
use disentangle_core::model::{DiagonalGaussian, Vae, VaeConfig};
use disentangle_core::numerics::{check_graph_gradients, FdConfig, Graph, RngStream, Tensor};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

fn normal_pdf(x: f64, m: f64, lv: f64) -> f64 {
    (-(x - m).powi(2) / (2.0 * lv.exp()) - 0.5 * (LN_2PI + lv)).exp()
}

fn gauss(mean: &[f64], lv: &[f64]) -> DiagonalGaussian {
    DiagonalGaussian::new(mean.to_vec(), lv.to_vec()).unwrap()
}

/// Midpoint-rule quadrature of the three terms for two-dimensional latents.
fn quadrature_terms(qs: &[DiagonalGaussian], probs: &[f64]) -> (f64, f64, f64) {
    let (lo, hi, steps) = (-7.0, 7.0, 700);
    let h = (hi - lo) / steps as f64;
    let grid: Vec<f64> = (0..steps).map(|i| lo + (i as f64 + 0.5) * h).collect();
    // per-dimension component densities on the grid
    let comp: Vec<[Vec<f64>; 2]> = qs
        .iter()
        .map(|q| [0, 1].map(|d| grid.iter().map(|&x| normal_pdf(x, q.mean[d], q.log_variance[d])).collect()))
        .collect();
    let marg: [Vec<f64>; 2] = [0, 1].map(|d| {
        (0..steps)
            .map(|i| comp.iter().zip(probs).map(|(c, p)| p * c[d][i]).sum())
            .collect()
    });
    let (mut mi, mut tc, mut dw) = (0.0, 0.0, 0.0);
    for a in 0..steps {
        for b in 0..steps {
            let qz: f64 = comp.iter().zip(probs).map(|(c, p)| p * c[0][a] * c[1][b]).sum();
            if qz < 1e-300 {
                continue;
            }
            let prod = marg[0][a] * marg[1][b];
            let pz = normal_pdf(grid[a], 0.0, 0.0) * normal_pdf(grid[b], 0.0, 0.0);
            for (c, p) in comp.iter().zip(probs) {
                let qn = c[0][a] * c[1][b];
                if qn > 1e-300 {
                    mi += p * qn * (qn / qz).ln() * h * h;
                }
            }
            tc += qz * (qz / prod).ln() * h * h;
            dw += qz * (prod / pz).ln() * h * h;
        }
    }
    (mi, tc, dw)
}

#[test]
fn exact_decomposition_matches_quadrature() {
    let qs = vec![
        gauss(&[-1.0, 0.5], &[-1.0, -0.5]),
        gauss(&[0.8, 0.9], &[-1.5, -1.0]),
        gauss(&[0.2, -1.2], &[-0.7, -1.2]),
    ];
    for probs in [vec![1.0 / 3.0; 3], vec![0.5, 0.3, 0.2]] {
        let est = exact_decomposition_weighted(&qs, &probs, &RngStream::new(3), 200_000).unwrap();
        let (mi, tc, dw) = quadrature_terms(&qs, &probs);
        let se = est.mc_stderr;
        assert!((est.index_code_mi - mi).abs() < 4.0 * se.index_code_mi + 1e-4, "MI {} vs {mi}", est.index_code_mi);
        assert!((est.total_correlation - tc).abs() < 4.0 * se.total_correlation + 1e-4, "TC {} vs {tc}", est.total_correlation);
        assert!((est.dimension_wise_kl - dw).abs() < 4.0 * se.dimension_wise_kl + 1e-4, "dw {} vs {dw}", est.dimension_wise_kl);
    }
}

#[test]
fn decomposition_sums_to_average_kl() {
    let mut rng = RngStream::new(8);
    let qs: Vec<DiagonalGaussian> = (0..40)
        .map(|_| gauss(&[rng.normal(), rng.normal(), rng.normal()], &[-1.0 - rng.uniform(), -0.5, -2.0 * rng.uniform()]))
        .collect();
    let est = exact_decomposition(&qs, &RngStream::new(9), 50_000).unwrap();
    assert!((est.total() - average_posterior_kl(&qs)).abs() < 3.0 * est.mc_stderr.total);
}

#[test]
fn identical_posteriors_have_zero_index_code_mi() {
    let q = gauss(&[0.4, -0.3], &[-1.0, 0.3]);
    let est = exact_decomposition(&vec![q.clone(); 10], &RngStream::new(1), 10_000).unwrap();
    assert!(est.index_code_mi.abs() < 1e-12);
    // a single diagonal Gaussian factorizes
    assert!(est.total_correlation.abs() < 1e-12);
    assert!((est.dimension_wise_kl - q.kl_to_standard_normal()).abs() < 4.0 * est.mc_stderr.dimension_wise_kl);
}

#[test]
fn far_tail_density_is_finite_and_exact() {
    // every component density underflows at z = 300
    let qs = vec![gauss(&[1.0], &[0.0]), gauss(&[-1.0], &[0.0])];
    let v = exact_aggregated_posterior_logdensity(&[300.0], &qs).unwrap();
    let oracle = -(299.0f64.powi(2)) / 2.0 - 0.5 * LN_2PI - 2f64.ln() + (-600.0f64).exp().ln_1p();
    assert!(v.is_finite());
    assert!((v - oracle).abs() <= 1e-12 * oracle.abs(), "{v} vs {oracle}");
}

fn ordered_choices(pool: &[usize], m: usize) -> Vec<Vec<usize>> {
    if m == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for (i, &p) in pool.iter().enumerate() {
        let mut rest = pool.to_vec();
        rest.remove(i);
        for mut tail in ordered_choices(&rest, m - 1) {
            tail.insert(0, p);
            out.push(tail);
        }
    }
    out
}

#[test]
fn mss_average_over_all_batches_is_exact_density() {
    let mut rng = RngStream::new(21);
    let n = 6;
    let qs: Vec<DiagonalGaussian> = (0..n).map(|_| gauss(&[rng.normal(), rng.normal()], &[-0.5, -1.0])).collect();
    let z = qs[2].reparameterize(&mut rng).z;
    let exact = exact_aggregated_posterior_logdensity(&z, &qs).unwrap();
    let others: Vec<usize> = (0..n).filter(|&i| i != 2).collect();
    for m in 1..n {
        let mut mean = 0.0;
        let batches = ordered_choices(&others, m);
        for rest in &batches {
            let idx: Vec<usize> = std::iter::once(2).chain(rest.iter().copied()).collect();
            let posts: Vec<DiagonalGaussian> = idx.iter().map(|&i| qs[i].clone()).collect();
            let mut rows = vec![z.clone()];
            rows.resize(idx.len(), vec![0.0, 0.0]);
            let b = MinibatchLatents::new(idx, n, Tensor::from_rows(&rows).unwrap(), &posts).unwrap();
            mean += mss_log_qz(&b).unwrap()[0].exp() / batches.len() as f64;
        }
        assert!((mean.ln() - exact).abs() < 1e-12, "M = {m}: {} vs {exact}", mean.ln());
    }
}

/// The objective recomputed with plain loops from the model's public API.
fn reference_loss(vae: &Vae, images: &Tensor, n: usize, w: DecompositionWeights, est: Estimator, eps: &Tensor) -> f64 {
    let b = images.rows();
    let post = vae.encode_batch(images).unwrap();
    let z: Vec<Vec<f64>> = (0..b)
        .map(|i| {
            (0..post[i].dim())
                .map(|d| post[i].mean[d] + (0.5 * post[i].log_variance[d]).exp() * eps.get2(i, d))
                .collect()
        })
        .collect();
    let recon: f64 = (0..b)
        .map(|i| {
            let logits = vae.decode_logits(&z[i]).unwrap();
            logits
                .iter()
                .zip(images.row(i))
                .map(|(&l, &x)| x * l - (1.0 + l.exp()).ln())
                .sum::<f64>()
        })
        .sum::<f64>()
        / b as f64;
    let dim = z[0].len();
    let logn = |x: f64, q: &DiagonalGaussian, d: usize| {
        -0.5 * ((x - q.mean[d]).powi(2) / q.log_variance[d].exp() + q.log_variance[d] + LN_2PI)
    };
    // weight of column j for row i, as a probability
    let weight = |i: usize, j: usize| -> f64 {
        let (nf, bf) = (n as f64, b as f64);
        match est {
            Estimator::Mws => 1.0 / (nf * bf),
            Estimator::Mss => {
                let m = bf - 1.0;
                if j == i {
                    1.0 / nf
                } else if j == (i + 1) % b {
                    (nf - m) / (nf * m)
                } else {
                    1.0 / m
                }
            }
        }
    };
    let (mut mi, mut tc, mut dw) = (0.0, 0.0, 0.0);
    for i in 0..b {
        let own: f64 = (0..dim).map(|d| logn(z[i][d], &post[i], d)).sum();
        let qz: f64 = (0..b)
            .map(|j| weight(i, j) * (0..dim).map(|d| logn(z[i][d], &post[j], d)).sum::<f64>().exp())
            .sum::<f64>()
            .ln();
        let prod: f64 = (0..dim)
            .map(|d| (0..b).map(|j| weight(i, j) * logn(z[i][d], &post[j], d).exp()).sum::<f64>().ln())
            .sum();
        let pz: f64 = z[i].iter().map(|v| -0.5 * (v * v + LN_2PI)).sum();
        mi += (own - qz) / b as f64;
        tc += (qz - prod) / b as f64;
        dw += (prod - pz) / b as f64;
    }
    -recon + w.alpha * mi + w.beta * tc + w.gamma * dw
}

fn small_model(seed: u64) -> (Vae, Tensor, Tensor) {
    let vae = Vae::new(
        VaeConfig {
            input_dim: 12,
            hidden: vec![10, 7],
            latent_dim: 3,
        },
        seed,
    )
    .unwrap();
    let mut rng = RngStream::new(seed + 100);
    let b = 7;
    let imgs: Vec<f64> = (0..b * 12).map(|_| rng.uniform()).collect();
    let eps = draw_noise(&mut rng, b, 3);
    (vae, Tensor::new(vec![b, 12], imgs).unwrap(), eps)
}

#[test]
fn loss_matches_independent_reimplementation() {
    for seed in 0..5 {
        let (vae, imgs, eps) = small_model(seed);
        let w = DecompositionWeights {
            alpha: 0.7,
            beta: 5.0,
            gamma: 1.3,
        };
        for est in [Estimator::Mws, Estimator::Mss] {
            let batch = Minibatch::uniform(imgs.clone(), 30);
            let mut g = Graph::new();
            let got = beta_tcvae_loss(&mut g, &vae, vae.params(), &batch, w, est, &eps).unwrap().terms.loss;
            let want = reference_loss(&vae, &imgs, 30, w, est, &eps);
            assert!((got - want).abs() < 1e-9 * want.abs().max(1.0), "{est}: {got} vs {want}");
        }
    }
}

#[test]
fn beta_vae_gradients_match_finite_differences() {
    for seed in 0..3 {
        let (vae, imgs, eps) = small_model(seed);
        let batch = Minibatch::uniform(imgs, 30);
        let report = check_graph_gradients(
            |g, p| Ok(beta_vae_loss(g, &vae, p, &batch, 4.0, &eps)?.loss),
            vae.params(),
            &FdConfig {
                tolerance: 1e-4,
                ..FdConfig::default()
            },
        )
        .unwrap();
        assert!(report.passed, "{:?}", report.params.iter().filter(|p| !p.passed).collect::<Vec<_>>());
    }
}

#[test]
fn alpha_zero_removes_the_index_code_term() {
    let (vae, imgs, eps) = small_model(4);
    let batch = Minibatch::uniform(imgs, 30);
    let mut g = Graph::new();
    let one = beta_tcvae_loss(&mut g, &vae, vae.params(), &batch, DecompositionWeights::tcvae(3.0), Estimator::Mws, &eps)
        .unwrap()
        .terms;
    let mut g = Graph::new();
    let mut w = DecompositionWeights::tcvae(3.0);
    w.alpha = 0.0;
    let zero = beta_tcvae_loss(&mut g, &vae, vae.params(), &batch, w, Estimator::Mws, &eps).unwrap().terms;
    assert!((one.loss - zero.loss - one.index_code_mi).abs() < 1e-10);
}
