//! Shared inputs for the benchmarks.

use mcgan_core::{Objective, Tensor, TrainConfig, Trainer};

/// Deterministic dense matrix with entries in `[-1, 1)`.
pub fn matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    let data = (0..rows * cols)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 52) as f64 - 1.0
        })
        .collect();
    Tensor::matrix(rows, cols, data).expect("shape matches data")
}

/// Symmetric `n × n` matrix.
pub fn symmetric(n: usize, seed: u64) -> Tensor {
    let a = matrix(n, n, seed);
    a.add(&a.transpose().unwrap()).unwrap().scale(0.5).unwrap()
}

/// Trainer with the default 2D configuration for `objective`.
pub fn trainer(objective: Objective) -> Trainer {
    Trainer::new(TrainConfig { objective, generator_updates: usize::MAX, ..TrainConfig::default() })
        .expect("default config is valid")
}
