//! Fixtures shared by the benchmarks.

use sisa_core::nn::{AdamConfig, OptimizerState, Tensor};
use sisa_core::trainer::fresh_model;
use sisa_core::{Architecture, ModelParameters};

pub fn model(arch: &Architecture, classes: usize) -> (ModelParameters<f32>, OptimizerState<f32>) {
    let heads: Vec<u32> = (0..classes as u32).collect();
    fresh_model(arch, &heads, 0, 0, AdamConfig::default()).expect("valid architecture")
}

/// A deterministic batch of `n` inputs of `width` features with labels cycling through `classes`.
pub fn batch(n: usize, dims: &[usize], classes: usize) -> (Tensor<f32>, Vec<usize>) {
    let width: usize = dims.iter().product();
    let data = (0..n * width).map(|i| ((i * 37 % 101) as f32 / 101.0) - 0.5).collect();
    let mut shape = vec![n];
    shape.extend_from_slice(dims);
    let x = Tensor::from_vec(shape, data).expect("shape matches data");
    (x, (0..n).map(|i| i % classes).collect())
}
