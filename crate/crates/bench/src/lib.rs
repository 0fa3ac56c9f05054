//! Fixtures shared by the benchmarks.

use disentangle_core::model::DiagonalGaussian;
use disentangle_core::numerics::RngStream;

/// `n` random diagonal Gaussians in `dim` dimensions.
pub fn random_posteriors(n: usize, dim: usize, seed: u64) -> Vec<DiagonalGaussian> {
    let mut rng = RngStream::new(seed);
    (0..n)
        .map(|_| {
            let mean = (0..dim).map(|_| rng.normal()).collect();
            let lv = (0..dim).map(|_| -2.0 + rng.uniform()).collect();
            DiagonalGaussian::new(mean, lv).expect("finite parameters")
        })
        .collect()
}
