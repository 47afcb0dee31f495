//! Shared fixtures for the benchmarks.

use overlearn_core::autodiff::Tensor;
use overlearn_core::rng::{stream, Stream};
use overlearn_core::trainer::{ConvBlock, ModelConfig};
use overlearn_core::TaskRegistry;
use rand::Rng;

/// Batch of `n` normalized-looking 3-channel images.
pub fn random_batch(n: usize, side: usize, seed: u64) -> Tensor<f32> {
    let mut r = stream(seed, Stream::Init, 999, 0, 0);
    Tensor::from_fn(&[n, 3, side, side], |_| r.gen_range(-1.0..1.0))
}

/// Desk-scale extractor: three conv blocks (8, 16, 32) at 64 px.
pub fn desk_config(task: &str) -> ModelConfig {
    let tasks = TaskRegistry::preserve_task();
    let mut cfg = ModelConfig::new(64, tasks.get(task).expect("known task").clone());
    cfg.conv_blocks = [8, 16, 32].iter().map(|&filters| ConvBlock { filters, kernel: 3 }).collect();
    cfg.lr = 1e-3;
    cfg
}
