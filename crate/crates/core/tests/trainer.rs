use disentangle_core::decomposition::DecompositionWeights;
use disentangle_core::metrics::MigConfig;
use disentangle_core::trainer::{
    ablate_alpha_zero, correlate_points, summarize, sweep, sweep_with, train, EvalConfig, Objective, RunRecord,
    ScatterPoint, SweepConfig, TrainConfig, TrainFailure,
};

fn tiny(steps: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        weights: DecompositionWeights::tcvae(4.0),
        batch_size: 32,
        steps,
        learning_rate: 3e-3,
        seed,
        dataset: "bumps:4x4x2".parse().unwrap(),
        hidden: vec![32],
        latent_dim: 4,
        log_every: 50,
        eval: EvalConfig {
            elbo_samples: 4,
            decomposition_samples: Some(10_000),
            mig: Some(MigConfig { samples_per_value: 300 }),
            higgins: None,
        },
        ..TrainConfig::default()
    }
}

/// A record with the wall-clock time removed.
fn comparable(r: &RunRecord) -> serde_json::Value {
    let mut v = serde_json::to_value(r).unwrap();
    v.as_object_mut().unwrap().remove("wall_time_secs");
    v
}

#[test]
fn fixed_seed_reproduces_bit_identically() {
    let a = train(&tiny(2000, 3)).map_err(|e| e.to_string()).unwrap();
    let b = train(&tiny(2000, 3)).map_err(|e| e.to_string()).unwrap();
    assert_eq!(a.record.final_loss.unwrap().to_bits(), b.record.final_loss.unwrap().to_bits());
    assert_eq!(comparable(&a.record), comparable(&b.record));
    assert_eq!(a.model.params().flatten(), b.model.params().flatten());
    let c = train(&tiny(2000, 4)).map_err(|e| e.to_string()).unwrap();
    assert_ne!(a.record.final_loss, c.record.final_loss);
}

#[test]
fn zero_steps_evaluates_the_initial_model() {
    let out = train(&tiny(0, 1)).map_err(|e| e.to_string()).unwrap();
    assert!(out.record.completed());
    assert!(out.record.loss_trace.is_empty());
    assert!(out.record.final_loss.is_none());
    assert!(out.record.elbo.is_some() && out.record.mig.is_some() && out.record.decomposition.is_some());
    let init = disentangle_core::model::Vae::new(out.model.config().clone(), 1).unwrap();
    assert_eq!(init.params().flatten(), out.model.params().flatten());
}

#[test]
fn beta_one_objectives_reach_similar_elbo() {
    // both objectives are the ELBO at beta = 1; differences are training noise
    let elbos = |objective| -> Vec<f64> {
        (0..3)
            .map(|s| {
                let mut c = tiny(1500, 10 + s);
                c.objective = objective;
                c.weights = DecompositionWeights::tcvae(1.0);
                c.eval.mig = None;
                train(&c).map_err(|e| e.to_string()).unwrap().record.elbo.unwrap().elbo
            })
            .collect()
    };
    let (t, v) = (elbos(Objective::BetaTcvae), elbos(Objective::BetaVae));
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let var = |x: &[f64]| {
        let m = mean(x);
        x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
    };
    let se = ((var(&t) + var(&v)) / 3.0).sqrt();
    let diff = (mean(&t) - mean(&v)).abs();
    assert!(diff < 3.0 * se + 0.02 * mean(&v).abs(), "{t:?} vs {v:?}");
}

#[test]
fn divergence_returns_last_good_parameters() {
    let mut c = tiny(50, 0);
    c.learning_rate = 1e300;
    match train(&c) {
        Err(TrainFailure::Diverged(d)) => {
            assert!(d.last_good.params().flatten().iter().all(|v| v.is_finite()));
            assert!(d.step < 50);
        }
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("lr 1e300 should diverge"),
    }
}

#[test]
fn sweep_bookkeeping_and_isolation() {
    let cfg = SweepConfig {
        betas: vec![1.0, 2.0, 4.0, 6.0, 8.0],
        seeds: 5,
        parallelism: 1,
    };
    let mut base = tiny(20, 0);
    base.eval.mig = Some(MigConfig { samples_per_value: 100 });
    let seen = std::sync::Mutex::new(0usize);
    let result = sweep_with(&cfg, &base, &|r, m| {
        assert_eq!(r.completed(), m.is_some());
        *seen.lock().unwrap() += 1;
    })
    .unwrap();
    assert_eq!(result.records.len(), 25);
    assert_eq!(*seen.lock().unwrap(), 25);
    assert_eq!(result.per_beta.len(), 5);
    for b in &result.per_beta {
        assert_eq!(b.runs, 5);
        let q = b.mig.as_ref().unwrap();
        assert!(q.min <= q.q1 && q.q1 <= q.median && q.median <= q.q3 && q.q3 <= q.max);
    }

    // reversed beta order: every record is unchanged
    let rev = sweep(
        &SweepConfig {
            betas: vec![8.0, 4.0, 1.0],
            seeds: 2,
            parallelism: 1,
        },
        &base,
    )
    .unwrap();
    for r in &rev.records {
        let twin = result
            .records
            .iter()
            .find(|o| o.config.seed == r.config.seed && o.config.weights.beta == r.config.weights.beta)
            .unwrap();
        assert_eq!(comparable(r), comparable(twin));
    }
    assert_eq!(summarize(&rev.records).len(), 3);
}

#[test]
fn single_run_sweep_is_train() {
    let base = tiny(30, 5);
    let s = sweep(
        &SweepConfig {
            betas: vec![4.0],
            seeds: 1,
            parallelism: 1,
        },
        &base,
    )
    .unwrap();
    let t = train(&base).map_err(|e| e.to_string()).unwrap();
    assert_eq!(comparable(&s.records[0]), comparable(&t.record));
    assert!(s.correlation.is_none());
}

fn point(beta: f64, tc: f64, mig: f64) -> ScatterPoint {
    ScatterPoint {
        beta,
        mean_tc: tc,
        mean_mig: mig,
        runs: 1,
    }
}

#[test]
fn correlation_edge_cases() {
    let anti: Vec<ScatterPoint> = (0..5).map(|i| point(i as f64, i as f64, (10 - i * i) as f64)).collect();
    let r = correlate_points(anti).unwrap();
    assert_eq!(r.spearman, -1.0);
    assert!(!r.undefined);

    let flat: Vec<ScatterPoint> = (0..4).map(|i| point(i as f64, i as f64, 0.3)).collect();
    let r = correlate_points(flat).unwrap();
    assert!(r.undefined);
    assert_eq!((r.pearson, r.spearman), (0.0, 0.0));

    assert!(correlate_points(vec![point(1.0, 1.0, 1.0), point(2.0, 0.5, 2.0)]).is_err());
}

/// Textbook Pearson and Spearman (no ties) for the oracle.
fn oracle(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let rank = |v: &[f64]| -> Vec<f64> { v.iter().map(|a| v.iter().filter(|b| *b < a).count() as f64).collect() };
    let (rx, ry) = (rank(x), rank(y));
    let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b).powi(2)).sum();
    (sxy / (sxx * syy).sqrt(), 1.0 - 6.0 * d2 / (n * (n * n - 1.0)))
}

#[test]
fn sweep_correlation_matches_oracle() {
    let mut base = tiny(150, 2);
    base.eval.mig = Some(MigConfig { samples_per_value: 200 });
    let s = sweep(
        &SweepConfig {
            betas: vec![1.0, 4.0, 10.0, 20.0],
            seeds: 1,
            parallelism: 1,
        },
        &base,
    )
    .unwrap();
    let c = s.correlation.unwrap();
    let tc: Vec<f64> = s.records.iter().map(|r| r.total_correlation().unwrap()).collect();
    let mig: Vec<f64> = s.records.iter().map(|r| r.mig_score().unwrap()).collect();
    let (p, sp) = oracle(&tc, &mig);
    assert!((c.pearson - p).abs() < 1e-10, "{} vs {p}", c.pearson);
    assert!((c.spearman - sp).abs() < 1e-10, "{} vs {sp}", c.spearman);
}

#[test]
fn alpha_ablation_pairs_matched_seeds() {
    let report = ablate_alpha_zero(&tiny(40, 0), 3, 1).unwrap();
    assert_eq!(report.pairs.len(), 3);
    assert_eq!(report.records.len(), 6);
    for (i, p) in report.pairs.iter().enumerate() {
        assert_eq!(p.seed, i as u64);
        assert!((p.difference - (p.mig_alpha_zero - p.mig_alpha_one)).abs() < 1e-15);
    }
    let pairs = &report.records;
    assert_eq!(pairs[0].config.weights.alpha, 1.0);
    assert_eq!(pairs[1].config.weights.alpha, 0.0);
    let st = &report.sign_test;
    assert_eq!(st.positive + st.negative + st.ties, 3);
    let mut vae = tiny(10, 0);
    vae.objective = Objective::BetaVae;
    assert!(ablate_alpha_zero(&vae, 2, 1).is_err());
}
