//! Numeric fixtures for the vector and clustering stages.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::rng;

/// Ternary vectors whose sign pattern comes from a rank-2 latent:
/// `x = sign_τ(W z)` with `z ~ N(0, I₂)` and τ = 0.5.
pub fn rank2_ternary(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    const TAU: f64 = 0.5;
    let mut r = rng::seeded(seed);
    let w: Vec<[f64; 2]> = (0..dim)
        .map(|_| [r.sample(StandardNormal), r.sample(StandardNormal)])
        .collect();
    (0..n)
        .map(|_| {
            let z: [f64; 2] = [r.sample(StandardNormal), r.sample(StandardNormal)];
            w.iter()
                .map(|wi| {
                    let y = wi[0] * z[0] + wi[1] * z[1];
                    if y > TAU {
                        1.0
                    } else if y < -TAU {
                        -1.0
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// Isotropic unit-variance blobs around centers drawn from [-10, 10]^dim.
/// Point `i` belongs to blob `i % k`.
pub fn gaussian_blobs(n: usize, dim: usize, k: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    assert!(k > 0, "need at least one blob");
    let mut r = rng::seeded(seed);
    let centers: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..dim).map(|_| r.random_range(-10.0..10.0)).collect())
        .collect();
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    let points = labels
        .iter()
        .map(|&c| centers[c].iter().map(|m| m + noise.sample(&mut r)).collect())
        .collect();
    (points, labels)
}
