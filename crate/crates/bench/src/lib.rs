//! Fixtures shared by the kernel benchmarks.

use advlab_core::nn::{Architecture, NetworkParams};
use advlab_core::util::derived_rng;
use rand::Rng;

/// A uniformly initialized network with `depth` hidden layers of `width` units.
pub fn random_network(dim: usize, width: usize, depth: usize, seed: u64) -> NetworkParams {
    let arch = Architecture::uniform(dim, width, depth).expect("valid architecture");
    NetworkParams::init_uniform(&arch, &mut derived_rng(seed, 0))
}

/// `count` points drawn uniformly from `[margin, 1 - margin]^dim`.
pub fn random_points(dim: usize, count: usize, margin: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = derived_rng(seed, 1);
    (0..count)
        .map(|_| (0..dim).map(|_| rng.gen_range(margin..=1.0 - margin)).collect())
        .collect()
}
