//! Seeded fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use varigen_core::image::ImageTensor;
use varigen_core::vq::{Codebook, LatentGrid};

pub fn image(size: usize, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageTensor::from_fn(size, size, 3, |_, _, _| rng.random_range(0.0..1.0))
}

pub fn latents(positions: usize, dim: usize, seed: u64) -> LatentGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    LatentGrid::new(positions, dim, (0..positions * dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .expect("shape")
}

pub fn codebook(size: usize, dim: usize, seed: u64) -> Codebook {
    Codebook::random(size, dim, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn scores(n: usize, seed: u64) -> (Vec<f64>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scores = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let labels = (0..n).map(|i| i % 3 == 0).collect();
    (scores, labels)
}

pub fn points(n: usize, dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect()
}
