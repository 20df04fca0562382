//! Benchmark fixtures.

use renet::cells::InitScheme;
use renet::layer::{ReNetLayerConfig, ReNetLayerParams};
use renet::{CellKind, Rng, Scalar, Tensor};

/// A randomly initialised layer and a matching random input image.
pub fn layer_fixture<T: Scalar>(
    input: (usize, usize, usize),
    patch: (usize, usize),
    hidden: usize,
    cell: CellKind,
) -> (ReNetLayerConfig, ReNetLayerParams<T>, Tensor<T>) {
    let cfg = ReNetLayerConfig::new(input, patch, hidden, cell).expect("valid layer geometry");
    let mut rng = Rng::new(0);
    let params = ReNetLayerParams::init(&cfg, &mut rng, InitScheme::default());
    let x = Tensor::from_fn(&[input.0, input.1, input.2], |_| T::from_f64(rng.uniform()));
    (cfg, params, x)
}

/// Uniform random values in `[-1, 1)`.
pub fn random_vec<T: Scalar>(len: usize, seed: u64) -> Vec<T> {
    let mut rng = Rng::new(seed);
    (0..len).map(|_| T::from_f64(rng.uniform_range(-1.0, 1.0))).collect()
}
