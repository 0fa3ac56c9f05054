use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use disentangle_core::data::make_bumps_dataset;
use disentangle_core::decomposition::{beta_tcvae_loss, draw_noise, DecompositionWeights, Estimator, Minibatch};
use disentangle_core::model::{Vae, VaeConfig};
use disentangle_core::numerics::{Adam, Graph, RngStream};

/// One forward, backward and Adam update of the default model.
fn loss_and_step(c: &mut Criterion) {
    let d = make_bumps_dataset(8, 8, 4).unwrap();
    let mut group = c.benchmark_group("tcvae_step");
    for b in [64, 128, 256] {
        let mut vae = Vae::new(VaeConfig::default(), 0).unwrap();
        let mut rng = RngStream::new(1);
        let batch = Minibatch::uniform(d.batch(&rng.sample_without_replacement(d.len(), b)), d.len());
        let eps = draw_noise(&mut rng, b, 6);
        for est in [Estimator::Mws, Estimator::Mss] {
            group.bench_function(BenchmarkId::new(est.to_string(), b), |bench| {
                bench.iter(|| {
                    let mut g = Graph::new();
                    let params = vae.params().clone();
                    let out = beta_tcvae_loss(&mut g, &vae, &params, &batch, DecompositionWeights::tcvae(6.0), est, &eps)
                        .unwrap();
                    let grads = g.backward(out.loss).unwrap();
                    let store = vae.params_mut();
                    store.zero_grad();
                    store.accumulate(&grads);
                    Adam::default().step(store).unwrap();
                })
            });
        }
    }
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = loss_and_step
}
criterion_main!(benches);
