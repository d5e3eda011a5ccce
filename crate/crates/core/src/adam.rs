//! Adam optimizer with bias correction.

use crate::error::{Error, Result};
use crate::network::ModelParams;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, aligned with the parameter registry.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Tensor> = params
            .registry()
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape().to_vec()).expect("parameter shapes are valid"))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update on a single tensor.
pub fn adam_update_tensor(
    param: &mut Tensor,
    grad: &Tensor,
    m: &mut Tensor,
    v: &mut Tensor,
    step: u64,
    cfg: &AdamConfig,
) {
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    let gd = grad.data();
    let md = m.data_mut();
    let vd = v.data_mut();
    let pd = param.data_mut();
    for i in 0..pd.len() {
        md[i] = cfg.beta1 * md[i] + (1.0 - cfg.beta1) * gd[i];
        vd[i] = cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * gd[i] * gd[i];
        let mhat = md[i] / bc1;
        let vhat = vd[i] / bc2;
        pd[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
    }
}

/// Updates every registered parameter in place. `grads` must align with the
/// registry, one gradient per parameter.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    let mut registry = params.registry_mut();
    if grads.len() != registry.len() {
        return Err(Error::Contract(format!(
            "gradient for every parameter required: got {} gradients for {} parameters",
            grads.len(),
            registry.len()
        )));
    }
    for (k, (name, param)) in registry.iter_mut().enumerate() {
        if grads[k].shape() != param.shape() {
            return Err(Error::Contract(format!(
                "gradient shape {:?} does not match parameter {name} {:?}",
                grads[k].shape(),
                param.shape()
            )));
        }
    }
    state.step += 1;
    for (k, (_, param)) in registry.into_iter().enumerate() {
        adam_update_tensor(
            param,
            &grads[k],
            &mut state.m[k],
            &mut state.v[k],
            state.step,
            cfg,
        );
    }
    Ok(())
}
