//! Random fixtures shared by the benchmarks.

use epm_core::geometry::sample_candidate_locations;
use epm_core::{init_part, EpmModel, FeatureTensor, Grid, ImageId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Tensor for a `size x size` image with `words` random word occurrences.
pub fn random_tensor(grid: Grid, d: usize, size: usize, words: usize, seed: u64) -> FeatureTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let occurrences: Vec<(f64, f64, usize)> = (0..words)
        .map(|_| (rng.gen_range(0.0..size as f64), rng.gen_range(0.0..size as f64), rng.gen_range(0..d)))
        .collect();
    FeatureTensor::from_words(grid, d, size, size, occurrences).expect("valid words")
}

/// Model of `num_parts` parts initialized on random boxes of random tensors.
pub fn random_model(grid: Grid, d: usize, num_parts: usize, k: usize, seed: u64) -> EpmModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sources: Vec<FeatureTensor> = (0..8).map(|i| random_tensor(grid, d, 64, 400, seed + 1 + i)).collect();
    let mut parts = Vec::with_capacity(num_parts);
    while parts.len() < num_parts {
        let src = rng.gen_range(0..sources.len());
        let loc = sample_candidate_locations(&grid, 1, 2, &mut rng).expect("grid admits 2-cell spans")[0];
        if let Ok(p) = init_part(&sources[src], &loc, ImageId(src as u32)) {
            parts.push(p);
        }
    }
    EpmModel::new(parts, grid, d, k, 1.0 / 3.0).expect("consistent parts")
}
