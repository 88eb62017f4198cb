//! Fixtures shared by the benchmarks.

use diu_core::synthdata::{Dataset, DatasetConfig};
use diu_core::ScoreSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A small default-resolution dataset: enough identities for one fold.
pub fn small_dataset() -> Dataset {
    Dataset::generate(DatasetConfig {
        n_identities: 10,
        n_samples: 4,
        ..DatasetConfig::default()
    })
    .expect("valid config")
}

/// Overlapping genuine/impostor score distributions on a coarse grid, so ties occur.
pub fn score_set(n_genuine: usize, n_impostor: usize, seed: u64) -> ScoreSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |shift: f64| ((rng.gen::<f64>() + shift) * 1000.0).round() / 1000.0;
    ScoreSet::new(
        (0..n_genuine).map(|_| draw(0.3)).collect(),
        (0..n_impostor).map(|_| draw(0.0)).collect(),
    )
}
