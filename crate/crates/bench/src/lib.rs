//! Fixtures shared by the criterion benchmarks in `benches/`.

use blockrank::mann::{ArchitectureSpec, BlockSpec, MannModel, OutputHead};
use blockrank::matrix::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform(-2, 2) features.
pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect())
}

/// Default-architecture model with small random weights and recorded activation means.
pub fn random_model(n_blocks: usize, block_size: usize, seed: u64) -> (MannModel, Matrix) {
    let spec = BlockSpec::contiguous(&vec![block_size; n_blocks]).expect("valid blocks");
    let arch = ArchitectureSpec::default_for(&spec, OutputHead::LinearRegression);
    let mut model = MannModel::zeroed(arch, spec).expect("valid architecture");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for w in model.weights_mut() {
        *w = rng.random_range(-0.3..0.3);
    }
    let data = random_matrix(512, n_blocks * block_size, seed + 1);
    model.record_activation_means(&data).expect("matching width");
    (model, data)
}
