//! Composite training loss: a log-attenuated depth term, a three-direction
//! block-gradient term, and a structural-similarity weight on their sum.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Loss hyperparameters. `ssim_c1`/`ssim_c2` follow the (0.01·L)², (0.03·L)²
/// convention for the configured depth range L.
#[derive(Debug, Clone, Copy)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    pub theta: f64,
    pub block_size: usize,
    pub depth_range: f64,
    pub ssim_c1: f64,
    pub ssim_c2: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 1.0,
            beta: 0.8,
            theta: 0.5,
            block_size: 2,
            depth_range: 1.0,
            ssim_c1: 0.01f64 * 0.01,
            ssim_c2: 0.03f64 * 0.03,
        }
    }
}

impl LossConfig {
    /// Rescales the SSIM stabilizers to a new depth range L.
    pub fn with_depth_range(mut self, l: f64) -> Self {
        self.depth_range = l;
        self.ssim_c1 = (0.01 * l) * (0.01 * l);
        self.ssim_c2 = (0.03 * l) * (0.03 * l);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::Param {
                name: "alpha/beta",
                msg: "loss weights must be nonnegative".into(),
            });
        }
        if !(self.theta > 0.0) {
            return Err(Error::Param {
                name: "theta",
                msg: format!("must be > 0, got {}", self.theta),
            });
        }
        if self.block_size == 0 {
            return Err(Error::Param {
                name: "block_size",
                msg: "must be positive".into(),
            });
        }
        if !(self.depth_range > 0.0) {
            return Err(Error::Param {
                name: "depth_range",
                msg: format!("must be > 0, got {}", self.depth_range),
            });
        }
        Ok(())
    }
}

/// Ablation switches mirroring the training flags.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossToggles {
    pub no_grad_loss: bool,
    pub no_diag: bool,
    pub no_ssim_weight: bool,
}

/// Block-gradient fields of one image over the common valid region.
#[derive(Debug, Clone)]
pub struct GradientMaps {
    pub gx: Tensor,
    pub gy: Tensor,
    pub gdiag: Tensor,
}

/// Scalar loss pieces of one forward pass. `total` stays on the tape for
/// backward; the rest are plain values for logging.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub total: Var,
    pub lambda: f64,
    pub depth: f64,
    pub grad: f64,
}

/// ln(x + theta) for nonnegative x.
pub fn f_log(x: f64, theta: f64) -> Result<f64> {
    if !(theta > 0.0) {
        return Err(Error::Param {
            name: "theta",
            msg: format!("must be > 0, got {theta}"),
        });
    }
    if x < 0.0 {
        return Err(Error::Domain {
            op: "f_log",
            index: 0,
            value: x,
            msg: "negative input".into(),
        });
    }
    Ok((x + theta).ln())
}

/// Mean of ln(|y − ŷ| + theta) over all pixels, on the tape.
pub fn depth_loss_node(tape: &mut Tape, y: Var, yhat: Var, theta: f64) -> Result<Var> {
    let d = tape.sub(y, yhat)?;
    let a = tape.abs(d)?;
    let f = tape.ln_offset(a, theta)?;
    tape.mean_all(f)
}

/// Value form of [`depth_loss_node`].
pub fn depth_loss(y: &Tensor, yhat: &Tensor, theta: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let (vy, vh) = (tape.leaf(y.clone()), tape.leaf(yhat.clone()));
    let out = depth_loss_node(&mut tape, vy, vh, theta)?;
    tape.value(out).item()
}

/// Sliding b×b window means with stride 1.
pub fn block_means(img: &Tensor, b: usize) -> Result<Tensor> {
    let mut tape = Tape::new();
    let v = tape.leaf(img.clone());
    let out = tape.block_means(v, b)?;
    Ok(tape.value(out).clone())
}

/// Block-mean differences along the three offsets (0,1), (1,0), (1,1),
/// cropped to the common (H−b)×(W−b) region.
pub fn block_gradients(img: &Tensor, b: usize) -> Result<GradientMaps> {
    let mut tape = Tape::new();
    let v = tape.leaf(img.clone());
    let m = tape.block_means(v, b)?;
    let gx = tape.offset_diff(m, 0, 1)?;
    let gy = tape.offset_diff(m, 1, 0)?;
    let gdiag = tape.offset_diff(m, 1, 1)?;
    Ok(GradientMaps {
        gx: tape.value(gx).clone(),
        gy: tape.value(gy).clone(),
        gdiag: tape.value(gdiag).clone(),
    })
}

/// Mean over valid positions of the summed ln(|Δgradient| + theta) terms,
/// on the tape. `include_diag` controls whether the diagonal direction
/// contributes a third term.
pub fn grad_loss_node(
    tape: &mut Tape,
    y: Var,
    yhat: Var,
    b: usize,
    theta: f64,
    include_diag: bool,
) -> Result<Var> {
    let my = tape.block_means(y, b)?;
    let mh = tape.block_means(yhat, b)?;
    let mut acc = None;
    let offsets: &[(usize, usize)] = if include_diag {
        &[(0, 1), (1, 0), (1, 1)]
    } else {
        &[(0, 1), (1, 0)]
    };
    for &(dr, dc) in offsets {
        let gy = tape.offset_diff(my, dr, dc)?;
        let gh = tape.offset_diff(mh, dr, dc)?;
        let d = tape.sub(gy, gh)?;
        let a = tape.abs(d)?;
        let f = tape.ln_offset(a, theta)?;
        acc = Some(match acc {
            None => f,
            Some(prev) => tape.add(prev, f)?,
        });
    }
    tape.mean_all(acc.unwrap())
}

/// Value form of [`grad_loss_node`] with the diagonal term included.
pub fn grad_loss(y: &Tensor, yhat: &Tensor, b: usize, theta: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let (vy, vh) = (tape.leaf(y.clone()), tape.leaf(yhat.clone()));
    let out = grad_loss_node(&mut tape, vy, vh, b, theta, true)?;
    tape.value(out).item()
}

/// Whole-image single-window structural similarity, clamped to [0,1], on the
/// tape. The identical two operand paths make ssim(y,y) exactly 1.
pub fn ssim_node(tape: &mut Tape, y: Var, yhat: Var, cfg: &LossConfig) -> Result<Var> {
    let shape = tape.value(y).shape().to_vec();
    if shape != tape.value(yhat).shape() {
        return Err(Error::shape(
            "ssim",
            format!(
                "operand shapes differ: {:?} vs {:?}",
                shape,
                tape.value(yhat).shape()
            ),
        ));
    }
    let ones = tape.leaf(Tensor::filled(shape.clone(), 1.0)?);
    let expand_dims = vec![1; shape.len()];
    let mu1 = tape.mean_all(y)?;
    let mu2 = tape.mean_all(yhat)?;
    let mu1e = {
        let m = tape.reshape(mu1, expand_dims.clone())?;
        tape.broadcast_mul(m, ones)?
    };
    let mu2e = {
        let m = tape.reshape(mu2, expand_dims)?;
        tape.broadcast_mul(m, ones)?
    };
    let cy = tape.sub(y, mu1e)?;
    let ch = tape.sub(yhat, mu2e)?;
    let var1 = {
        let sq = tape.mul(cy, cy)?;
        tape.mean_all(sq)?
    };
    let var2 = {
        let sq = tape.mul(ch, ch)?;
        tape.mean_all(sq)?
    };
    let cov = {
        let pr = tape.mul(cy, ch)?;
        tape.mean_all(pr)?
    };
    let num_l = {
        let two_mu1 = tape.mul_scalar(mu1, 2.0)?;
        let prod = tape.mul(two_mu1, mu2)?;
        tape.add_scalar(prod, cfg.ssim_c1)?
    };
    let den_l = {
        let mu1sq = tape.mul(mu1, mu1)?;
        let mu2sq = tape.mul(mu2, mu2)?;
        let s = tape.add(mu1sq, mu2sq)?;
        tape.add_scalar(s, cfg.ssim_c1)?
    };
    let num_c = {
        let two_cov = tape.mul_scalar(cov, 2.0)?;
        tape.add_scalar(two_cov, cfg.ssim_c2)?
    };
    let den_c = {
        let s = tape.add(var1, var2)?;
        tape.add_scalar(s, cfg.ssim_c2)?
    };
    let num = tape.mul(num_l, num_c)?;
    let den = tape.mul(den_l, den_c)?;
    let ratio = tape.div(num, den)?;
    tape.clamp_unit(ratio)
}

/// Value form of [`ssim_node`].
pub fn ssim(y: &Tensor, yhat: &Tensor, cfg: &LossConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let (vy, vh) = (tape.leaf(y.clone()), tape.leaf(yhat.clone()));
    let out = ssim_node(&mut tape, vy, vh, cfg)?;
    tape.value(out).item()
}

/// Full loss on the tape: λ·(α·depth + β·grad) with λ = 1 − SSIM, subject to
/// the ablation toggles.
pub fn total_loss_node(
    tape: &mut Tape,
    y: Var,
    yhat: Var,
    cfg: &LossConfig,
    toggles: LossToggles,
) -> Result<LossParts> {
    cfg.validate()?;
    let depth = depth_loss_node(tape, y, yhat, cfg.theta)?;
    let mut inner = tape.mul_scalar(depth, cfg.alpha)?;
    let mut grad_value = 0.0;
    if !toggles.no_grad_loss {
        let g = grad_loss_node(tape, y, yhat, cfg.block_size, cfg.theta, !toggles.no_diag)?;
        grad_value = tape.value(g).item()?;
        let weighted = tape.mul_scalar(g, cfg.beta)?;
        inner = tape.add(inner, weighted)?;
    }
    let depth_value = tape.value(depth).item()?;
    if toggles.no_ssim_weight {
        return Ok(LossParts {
            total: inner,
            lambda: 1.0,
            depth: depth_value,
            grad: grad_value,
        });
    }
    let s = ssim_node(tape, y, yhat, cfg)?;
    let neg = tape.mul_scalar(s, -1.0)?;
    let lambda = tape.add_scalar(neg, 1.0)?;
    let total = tape.mul(lambda, inner)?;
    Ok(LossParts {
        total,
        lambda: tape.value(lambda).item()?,
        depth: depth_value,
        grad: grad_value,
    })
}

/// Value form of [`total_loss_node`].
pub fn total_loss(
    y: &Tensor,
    yhat: &Tensor,
    cfg: &LossConfig,
    toggles: LossToggles,
) -> Result<f64> {
    let mut tape = Tape::new();
    let (vy, vh) = (tape.leaf(y.clone()), tape.leaf(yhat.clone()));
    let parts = total_loss_node(&mut tape, vy, vh, cfg, toggles)?;
    tape.value(parts.total).item()
}
