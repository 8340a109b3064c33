//! Seeded fixtures shared by the kernel benchmarks.

use ncd_core::{init_model, ModelDims, ModelParams, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A `rows × cols` matrix of uniform values in `[-1, 1)`.
pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// An `n × n` cost matrix with integer entries in `0..100`.
pub fn random_cost(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..n).map(|_| rng.random_range(0..100) as f64).collect()).collect()
}

/// A freshly initialised model with the default widths for `input_dim`
/// inputs and `c_l` + `c_u` classes.
pub fn default_model(input_dim: usize, c_l: usize, c_u: usize) -> ModelParams {
    init_model(ModelDims::new(input_dim, c_l, c_u), 0).expect("default dims are valid")
}
