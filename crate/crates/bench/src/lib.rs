//! Shared fixtures for the benchmark targets.

use gln_core::tensor::{FillRule, Shape, Tensor};

/// Deterministic pseudo-random image batch.
pub fn random_batch(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Tensor<f32> {
    Tensor::create(
        Shape::nchw(n, c, h, w).expect("shape"),
        FillRule::Uniform { lo: 0.0, hi: 1.0, seed },
    )
    .expect("tensor")
}
