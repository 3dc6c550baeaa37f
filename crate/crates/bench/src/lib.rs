//! Fixtures shared by the benchmarks.

use ditto_core::harness::{generate, rotation_benchmark, LADDER_ANGLES};
use ditto_core::{Activation, DomainDataset, EncoderSpec, Rng, Tensor};

pub fn encoder(hidden: usize) -> EncoderSpec {
    EncoderSpec {
        input_dim: 2,
        hidden_dims: vec![hidden, hidden],
        activation: Activation::Tanh,
    }
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = Rng::new(seed);
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).expect("nonzero shape")
}

pub fn ladder_dataset(seed: u64) -> DomainDataset {
    generate(&rotation_benchmark(&LADDER_ANGLES), seed).expect("benchmark spec is valid")
}
