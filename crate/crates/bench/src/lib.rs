//! Shared fixtures for the benchmarks.

use lorentzkit::manifold::{random_point, Curvature, LorentzPoint};
use lorentzkit::rng::seeded;
use lorentzkit::synth::{gen_epochs, EpochDataset, EpochSpec};

pub fn cloud(n: usize, dim: usize, radius: f64, seed: u64) -> Vec<LorentzPoint> {
    let mut rng = seeded(seed);
    (0..n).map(|_| random_point(&mut rng, dim, radius, Curvature::default())).collect()
}

/// Six domains, four classes, `per_cell` epochs per cell at P=8, T=256.
pub fn epochs(per_cell: usize) -> EpochDataset {
    gen_epochs(&EpochSpec { per_cell, ..EpochSpec::default() }).expect("default spec is valid")
}
