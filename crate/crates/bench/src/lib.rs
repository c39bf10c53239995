//! Fixtures shared by the criterion benches.

use rand::Rng;

use broomscan_core::balance::SequenceSample;
use broomscan_core::features::N_FEATURES;
use broomscan_core::{seeds, Label};

/// Random sequences of `stages` steps; every fifth one infected.
pub fn sequences(n: usize, stages: usize, seed: u64) -> Vec<SequenceSample> {
    let mut rng = seeds::rng(seed);
    (0..n)
        .map(|i| SequenceSample {
            plant_id: format!("P{i:03}"),
            stages: (0..stages).map(|s| 324.0 + 300.0 * s as f64).collect(),
            matrix: (0..stages)
                .map(|_| {
                    (0..N_FEATURES)
                        .map(|_| rng.random_range(-1.0..1.0))
                        .collect()
                })
                .collect(),
            label: if i % 5 == 0 {
                Label::Infected
            } else {
                Label::Healthy
            },
            synthetic: false,
        })
        .collect()
}

/// A plot's worth of reflectance pixels.
pub fn pixels(n: usize, seed: u64) -> Vec<f32> {
    let mut rng = seeds::rng(seed);
    (0..n).map(|_| rng.random_range(0.0..0.6)).collect()
}
