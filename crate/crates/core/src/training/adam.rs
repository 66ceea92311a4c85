use std::collections::BTreeMap;

use crate::autodiff::GradientSet;
use crate::error::{shape_err, Result};
use crate::model::ParamSet;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.0005,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates, created lazily per parameter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<usize, Tensor>,
    pub v: BTreeMap<usize, Tensor>,
}

/// One bias-corrected Adam update. Parameters without a gradient entry
/// are treated as having a zero gradient.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &GradientSet,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    for (&id, g) in grads {
        if id >= params.len() || params.tensor(id).shape() != g.shape() {
            return Err(shape_err(format!("gradient for parameter {id} has shape {:?}", g.shape())));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for id in 0..params.len() {
        let shape = params.tensor(id).shape().to_vec();
        let m = state.m.entry(id).or_insert_with(|| Tensor::zeros(&shape));
        let v = state.v.entry(id).or_insert_with(|| Tensor::zeros(&shape));
        let g = grads.get(&id).map(|g| g.data());
        let theta = params.tensor_mut(id).data_mut();
        let moments = m.data_mut().iter_mut().zip(v.data_mut());
        for (k, (p, (mk, vk))) in theta.iter_mut().zip(moments).enumerate() {
            let gk = g.map_or(0.0, |g| g[k]);
            *mk = cfg.beta1 * *mk + (1.0 - cfg.beta1) * gk;
            *vk = cfg.beta2 * *vk + (1.0 - cfg.beta2) * gk * gk;
            let m_hat = *mk / c1;
            let v_hat = *vk / c2;
            *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}
