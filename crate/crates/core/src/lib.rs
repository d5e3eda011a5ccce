//! Attention-gated encoder-decoder depth estimation on a tape-based autodiff
//! tensor engine: dense f64 tensors, reverse-mode differentiation, the
//! channel-then-spatial attention block, the composite depth/gradient/SSIM
//! loss, evaluation metrics, synthetic scene data, and a deterministic
//! training loop.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adam;
pub mod camb;
pub mod checks;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod init;
pub mod loss;
pub mod metrics;
pub mod network;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod train;

pub use adam::{AdamConfig, AdamState};
pub use checks::{run_standard_checks, CheckReport};
pub use data::{DepthSample, SceneSpec};
pub use error::{Error, Result};
pub use loss::{LossConfig, LossToggles};
pub use metrics::MetricsReport;
pub use network::{ModelConfig, ModelParams};
pub use rng::SplitMix64;
pub use tape::{Grads, Tape, Var};
pub use train::{train, LogRow, TrainConfig};
pub use tensor::Tensor;
