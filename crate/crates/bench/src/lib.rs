//! Shared fixtures for the pipeline benchmarks: seeded tensors and scenes
//! sized so a full benchmark run stays in the seconds range.

use camb_core::data::scene::{synth_scene, SceneSpec};
use camb_core::rng::SplitMix64;
use camb_core::{DepthSample, Tensor};

/// Seeded feature map with values in (0, 1).
pub fn feature_map(seed: u64, h: usize, w: usize, c: usize) -> Tensor {
    let mut rng = SplitMix64::new(seed);
    Tensor::from_fn(vec![h, w, c], |_| 0.01 + 0.98 * rng.next_f64()).expect("valid shape")
}

/// Seeded depth-like map with values in (0, 1).
pub fn depth_map(seed: u64, h: usize, w: usize) -> Tensor {
    let mut rng = SplitMix64::new(seed);
    Tensor::from_fn(vec![h, w], |_| 0.01 + 0.98 * rng.next_f64()).expect("valid shape")
}

/// Seeded square kernel in conv layout (k, k, c_in, c_out).
pub fn kernel(seed: u64, k: usize, c_in: usize, c_out: usize) -> Tensor {
    let mut rng = SplitMix64::new(seed);
    Tensor::from_fn(vec![k, k, c_in, c_out], |_| rng.range(-0.2, 0.2)).expect("valid shape")
}

/// Small synthetic training set.
pub fn scenes(count: usize, side: usize) -> Vec<DepthSample> {
    (0..count)
        .map(|i| {
            synth_scene(&SceneSpec {
                seed: 100 + i as u64,
                height: side,
                width: side,
                n_shapes: 3,
                depth_max: 2.0,
            })
            .expect("valid spec")
        })
        .collect()
}
