use disentangle_core::data::{
    make_bumps_dataset, make_pose_dataset, read_dataset, write_dataset, write_factor_csv, DatasetSpec,
    JointFactorDistribution, PoseConfig, POSE_LEVELS,
};
use disentangle_core::numerics::RngStream;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn chi_square_p(counts: &[u64], probs: &[f64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let mut stat = 0.0;
    let mut cells = 0;
    for (&c, &p) in counts.iter().zip(probs) {
        if p > 0.0 {
            let e = p * total as f64;
            stat += (c as f64 - e).powi(2) / e;
            cells += 1;
        } else {
            assert_eq!(c, 0, "drew a zero-probability cell");
        }
    }
    1.0 - ChiSquared::new((cells - 1) as f64).unwrap().cdf(stat)
}

#[test]
fn pose_sampling_passes_chi_square() {
    for (i, config) in PoseConfig::ALL.iter().enumerate() {
        let d = make_pose_dataset(*config).unwrap();
        let mut rng = RngStream::new(40 + i as u64);
        let mut counts = vec![0u64; d.len()];
        for _ in 0..1_000_000 {
            counts[d.sample_index(&mut rng)] += 1;
        }
        let p = chi_square_p(&counts, d.index_probs());
        assert!(p > 1e-3, "{config:?}: p = {p}");
    }
}

#[test]
fn skewed_joint_rejects_uniform_hypothesis() {
    // the test above must be able to fail
    let d = make_pose_dataset(PoseConfig::B).unwrap();
    let mut rng = RngStream::new(5);
    let mut counts = vec![0u64; d.len()];
    for _ in 0..100_000 {
        counts[d.sample_index(&mut rng)] += 1;
    }
    let uniform = vec![1.0 / d.len() as f64; d.len()];
    assert!(chi_square_p(&counts, &uniform) < 1e-6);
}

#[test]
fn config_b_empirical_marginals_within_one_percent() {
    let d = make_pose_dataset(PoseConfig::B).unwrap();
    let mut rng = RngStream::new(77);
    let draws = 1_000_000;
    let mut az = vec![0.0; POSE_LEVELS];
    let mut el = vec![0.0; POSE_LEVELS];
    for _ in 0..draws {
        let n = d.sample_index(&mut rng);
        az[d.factors().level(n, 0)] += 1.0 / draws as f64;
        el[d.factors().level(n, 1)] += 1.0 / draws as f64;
    }
    for (emp, exact) in [(az, d.joint().marginal(0)), (el, d.joint().marginal(1))] {
        for (e, x) in emp.iter().zip(&exact) {
            assert!((e - x).abs() / x < 0.01 + 3.0 * (x / draws as f64).sqrt() / x, "{e} vs {x}");
        }
    }
}

#[test]
fn pose_configs_have_their_stated_shapes() {
    let a = PoseConfig::A.joint();
    assert!(a.is_uniform());
    for c in [PoseConfig::B, PoseConfig::C, PoseConfig::D] {
        let j = c.joint();
        assert!(j.has_full_support());
        assert!((j.max_min_ratio() - 4.0).abs() < 1e-12, "{c:?}: {}", j.max_min_ratio());
    }
    // C: zero covariance between the two factors but strong dependence
    let c = PoseConfig::C.joint();
    let (ma, me) = (c.marginal(0), c.marginal(1));
    let ea: f64 = ma.iter().enumerate().map(|(i, p)| i as f64 * p).sum();
    let ee: f64 = me.iter().enumerate().map(|(i, p)| i as f64 * p).sum();
    let mut cov = 0.0;
    let mut mi = 0.0;
    for cell in 0..c.len() {
        let l = c.cell_levels(cell);
        let p = c.prob(cell);
        cov += p * (l[0] as f64 - ea) * (l[1] as f64 - ee);
        mi += p * (p / (ma[l[0]] * me[l[1]])).ln();
    }
    assert!(cov.abs() < 1e-12, "{cov}");
    assert!(mi > 0.05, "{mi}");
}

#[test]
fn bumps_conditionals_partition_the_dataset() {
    let d = make_bumps_dataset(4, 3, 2).unwrap();
    assert_eq!(d.len(), 24);
    for k in 0..3 {
        let spec = &d.factors().specs()[k];
        let mut seen = vec![false; d.len()];
        let mut mass = 0.0;
        for v in spec.values() {
            let c = d.conditional_index_distribution(k, *v).unwrap();
            for (&n, &w) in c.indices.iter().zip(&c.weights) {
                assert!(!seen[n]);
                seen[n] = true;
                assert!((d.factors().values(n)[k] - v).abs() < 1e-12);
                mass += w;
            }
        }
        assert!(seen.iter().all(|&s| s));
        assert!((mass - spec.cardinality() as f64).abs() < 1e-9);
    }
    assert!(d.conditional_index_distribution(0, 2.5).is_err());
}

#[test]
fn oversized_or_degenerate_grids_rejected() {
    assert!(make_bumps_dataset(1, 8, 4).is_err());
    assert!(make_bumps_dataset(64, 64, 2).is_err());
    assert!(JointFactorDistribution::from_weights(vec![2, 2], vec![0.0; 4]).is_err());
}

#[test]
fn export_round_trip_is_exact() {
    let d = "pose-d".parse::<DatasetSpec>().unwrap().build().unwrap();
    let mut buf = Vec::new();
    write_dataset(&d, &mut buf).unwrap();
    let back = read_dataset(&buf[..]).unwrap();
    assert_eq!(back.images.rows(), d.len());
    assert_eq!(back.joint_tag, d.joint_tag());
    assert_eq!(back.factors.len(), 2);
    assert_eq!(back.images.data(), d.images().data());

    let mut csv = Vec::new();
    write_factor_csv(&d, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    let total: f64 = text
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-9);
}
