//! Option resolution: command-line flags override config-file values, which
//! override defaults; the seed falls back to CAMB_SEED before its default.

use camb_core::loss::{LossConfig, LossToggles};
use camb_core::network::ModelConfig;
use serde::Deserialize;
use std::path::PathBuf;

use crate::failure::Failure;
use crate::RunArgs;

pub const DEFAULT_LR: f64 = 1e-4;
pub const DEFAULT_BATCH_SIZE: usize = 8;
pub const DEFAULT_STEPS: usize = 300;
pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_BETA: f64 = 0.8;
pub const DEFAULT_THETA: f64 = 0.5;
pub const DEFAULT_BLOCK_SIZE: usize = 2;
pub const DEFAULT_P: f64 = 3.0;
pub const DEFAULT_REDUCTION: usize = 4;
pub const DEFAULT_ZETA: f64 = 0.3;
pub const DEFAULT_ETA: f64 = 0.3;
pub const DEFAULT_HEIGHT: usize = 32;
pub const DEFAULT_WIDTH: usize = 32;
pub const DEFAULT_N_SHAPES: usize = 3;
pub const DEFAULT_DEPTH_MAX: f64 = 2.0;
pub const DEFAULT_TRAIN_COUNT: usize = 64;
pub const DEFAULT_EVAL_COUNT: usize = 16;

/// Config-file schema: every long option by its flag name.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    lr: Option<f64>,
    batch_size: Option<usize>,
    steps: Option<usize>,
    seed: Option<u64>,
    alpha: Option<f64>,
    beta: Option<f64>,
    theta: Option<f64>,
    block_size: Option<usize>,
    p: Option<f64>,
    reduction: Option<usize>,
    zeta: Option<f64>,
    eta: Option<f64>,
    no_camb: Option<bool>,
    no_grad_loss: Option<bool>,
    no_diag: Option<bool>,
    no_ssim_weight: Option<bool>,
    data_root: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    out: Option<PathBuf>,
    count: Option<usize>,
    height: Option<usize>,
    width: Option<usize>,
    n_shapes: Option<usize>,
    depth_max: Option<f64>,
}

/// Fully resolved run options.
#[derive(Debug, Clone)]
pub struct Settings {
    pub lr: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub alpha: f64,
    pub beta: f64,
    pub theta: f64,
    pub block_size: usize,
    pub p: f64,
    pub reduction: usize,
    pub zeta: f64,
    pub eta: f64,
    pub no_camb: bool,
    pub no_grad_loss: bool,
    pub no_diag: bool,
    pub no_ssim_weight: bool,
    pub data_root: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub count: Option<usize>,
    pub height: usize,
    pub width: usize,
    pub n_shapes: usize,
    pub depth_max: f64,
    pub bypass_model: bool,
}

impl Settings {
    pub fn resolve(args: &RunArgs) -> Result<Self, Failure> {
        let file = match &args.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    Failure::Io(format!("cannot read config file {}: {e}", path.display()))
                })?;
                toml::from_str::<FileConfig>(&text).map_err(|e| {
                    Failure::Config(format!("invalid config file {}: {e}", path.display()))
                })?
            }
            None => FileConfig::default(),
        };

        let seed = match args.seed.or(file.seed) {
            Some(s) => s,
            None => match std::env::var("CAMB_SEED") {
                Ok(raw) => raw.parse().map_err(|_| {
                    Failure::Config(format!(
                        "CAMB_SEED must be an unsigned integer, got {raw:?}"
                    ))
                })?,
                Err(_) => 0,
            },
        };

        let settings = Settings {
            lr: args.lr.or(file.lr).unwrap_or(DEFAULT_LR),
            batch_size: args.batch_size.or(file.batch_size).unwrap_or(DEFAULT_BATCH_SIZE),
            steps: args.steps.or(file.steps).unwrap_or(DEFAULT_STEPS),
            seed,
            alpha: args.alpha.or(file.alpha).unwrap_or(DEFAULT_ALPHA),
            beta: args.beta.or(file.beta).unwrap_or(DEFAULT_BETA),
            theta: args.theta.or(file.theta).unwrap_or(DEFAULT_THETA),
            block_size: args.block_size.or(file.block_size).unwrap_or(DEFAULT_BLOCK_SIZE),
            p: args.p.or(file.p).unwrap_or(DEFAULT_P),
            reduction: args.reduction.or(file.reduction).unwrap_or(DEFAULT_REDUCTION),
            zeta: args.zeta.or(file.zeta).unwrap_or(DEFAULT_ZETA),
            eta: args.eta.or(file.eta).unwrap_or(DEFAULT_ETA),
            no_camb: args.no_camb || file.no_camb.unwrap_or(false),
            no_grad_loss: args.no_grad_loss || file.no_grad_loss.unwrap_or(false),
            no_diag: args.no_diag || file.no_diag.unwrap_or(false),
            no_ssim_weight: args.no_ssim_weight || file.no_ssim_weight.unwrap_or(false),
            data_root: args.data_root.clone().or(file.data_root),
            checkpoint: args.checkpoint.clone().or(file.checkpoint),
            out: args.out.clone().or(file.out),
            count: args.count.or(file.count),
            height: args.height.or(file.height).unwrap_or(DEFAULT_HEIGHT),
            width: args.width.or(file.width).unwrap_or(DEFAULT_WIDTH),
            n_shapes: args.n_shapes.or(file.n_shapes).unwrap_or(DEFAULT_N_SHAPES),
            depth_max: args.depth_max.or(file.depth_max).unwrap_or(DEFAULT_DEPTH_MAX),
            bypass_model: args.bypass_model,
        };
        settings.validate()?;
        Ok(settings)
    }

    fn validate(&self) -> Result<(), Failure> {
        let bad = |msg: String| Err(Failure::Config(msg));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("--lr must be a positive finite number, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("--batch-size must be at least 1".into());
        }
        for (name, v) in [("--zeta", self.zeta), ("--eta", self.eta)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must be in [0,1], got {v}"));
            }
        }
        if self.reduction == 0 {
            return bad("--reduction must be at least 1".into());
        }
        if !(self.p >= 1.0) {
            return bad(format!("--p must be at least 1, got {}", self.p));
        }
        if !(self.depth_max > 0.0) {
            return bad(format!("--depth-max must be positive, got {}", self.depth_max));
        }
        // Exercises the same checks the loss itself would make, so bad
        // weights are rejected before any compute.
        self.loss_config(1.0).validate().map_err(Failure::from)
    }

    pub fn loss_config(&self, depth_range: f64) -> LossConfig {
        LossConfig {
            alpha: self.alpha,
            beta: self.beta,
            theta: self.theta,
            block_size: self.block_size,
            ..LossConfig::default()
        }
        .with_depth_range(depth_range)
    }

    pub fn loss_toggles(&self) -> LossToggles {
        LossToggles {
            no_grad_loss: self.no_grad_loss,
            no_diag: self.no_diag,
            no_ssim_weight: self.no_ssim_weight,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            reduction: self.reduction,
            p: self.p,
            use_camb: !self.no_camb,
            ..ModelConfig::default()
        }
    }
}
