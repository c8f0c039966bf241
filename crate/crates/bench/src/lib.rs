//! Fixtures shared by the criterion benches in `benches/`.

use rand::Rng;
use warpgen_core::rng::seeded;
use warpgen_core::{PointCloud, Tensor};

pub fn random_cloud(n: usize, seed: u64) -> PointCloud {
    let mut rng = seeded(seed);
    PointCloud::new(
        (0..n)
            .map(|_| {
                [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ]
            })
            .collect(),
    )
}

pub fn random_tensor(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = seeded(seed);
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    Tensor::from_vec(rows, cols, data).expect("sized buffer")
}

pub fn shape_set(count: usize, n: usize, seed: u64) -> Vec<PointCloud> {
    (0..count)
        .map(|i| random_cloud(n, seed + i as u64))
        .collect()
}
