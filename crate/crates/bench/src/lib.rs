//! Shared fixtures for the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roadgrid_core::markings::ScoredCells;
use roadgrid_core::synth::SceneSpec;
use roadgrid_core::{Cell, ConfidenceMap, Point};

/// Full 24-channel tensor for the default two-lane scene.
pub fn scene_tensor(noise: f64, seed: u64) -> ConfidenceMap {
    let spec = SceneSpec {
        noise,
        ..SceneSpec::default()
    };
    spec.tensor(seed).expect("default scene renders")
}

/// `n` points scattered uniformly over a 640x480 frame.
pub fn random_points(n: usize, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Point::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)))
        .collect()
}

/// Each cell of an 80x60 lattice switched on with probability `density`.
pub fn random_mask(density: f64, seed: u64) -> ScoredCells {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells = ScoredCells::new();
    for row in 0..60 {
        for col in 0..80 {
            if rng.random_bool(density) {
                cells.insert(Cell::new(col, row), rng.random_range(0.5..1.0));
            }
        }
    }
    cells
}
