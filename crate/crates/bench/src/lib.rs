//! Seeded fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crm_core::{
    fit_bins, ArchDescriptor, BinMode, CrmConfig, Estimator, KernelSpec, PreferenceBatch, PreferencePair, RewardModel,
    Variant,
};

/// `bins` samples of `per_bin` rewards each, bin `b` shifted by `0.1 b`.
pub fn binned_rewards(bins: usize, per_bin: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..bins).map(|b| (0..per_bin).map(|_| 0.1 * b as f64 + rng.random_range(-1.0..1.0)).collect()).collect()
}

/// A random batch of `n` pairs with `dim` features and `z` uniform on [0, 1).
pub fn batch(n: usize, dim: usize, seed: u64) -> PreferenceBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = (0..n)
        .map(|_| PreferencePair {
            chosen: (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect(),
            rejected: (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect(),
            z_chosen: rng.random::<f64>(),
            z_rejected: rng.random::<f64>(),
        })
        .collect();
    PreferenceBatch::new(pairs).expect("fixture batch is well formed")
}

/// The default reward head for `dim` inputs.
pub fn model(dim: usize, seed: u64) -> RewardModel {
    RewardModel::init(ArchDescriptor::mlp(dim, vec![16]), seed).expect("fixture model is valid")
}

/// Quantile bins fitted on the batch's own z values.
pub fn crm_config(
    batch: &PreferenceBatch,
    bins: usize,
    lambda: f64,
    variant: Variant,
    estimator: Estimator,
) -> CrmConfig {
    let z: Vec<f64> = batch.pairs().iter().flat_map(|p| [p.z_chosen, p.z_rejected]).collect();
    CrmConfig {
        lambda,
        variant,
        bins: fit_bins(&z, BinMode::Quantile { bins }).expect("fixture bins fit"),
        kernel: KernelSpec::default(),
        estimator,
    }
}
