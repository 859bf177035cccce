//! Adam with coupled L2 weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decay for every trainable tensor outside the head.
    pub weight_decay: f64,
    /// Decay for the classification head weights.
    pub head_weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 2e-5,
            head_weight_decay: 2e-4,
        }
    }
}

/// Moments and step count for a fixed list of parameters.
#[derive(Clone, Debug)]
pub struct OptimState {
    pub cfg: AdamConfig,
    pub step: u64,
    ids: Vec<ParamId>,
    decay: Vec<f64>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimState {
    /// State for `ids`, with `decay[i]` the coupled decay of `ids[i]`.
    pub fn new(cfg: AdamConfig, store: &ParamStore, ids: Vec<ParamId>, decay: Vec<f64>) -> Self {
        assert_eq!(ids.len(), decay.len());
        let zeros: Vec<Vec<f64>> = ids.iter().map(|&id| vec![0.0; store.get(id).len()]).collect();
        Self {
            cfg,
            step: 0,
            ids,
            decay,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// All trainable parameters; names starting with `head_prefix` get the head decay.
    pub fn for_store(cfg: AdamConfig, store: &ParamStore, head_prefix: &str) -> Self {
        let ids = store.trainable_ids();
        let decay = ids
            .iter()
            .map(|&id| {
                if store.param(id).name.starts_with(head_prefix) {
                    cfg.head_weight_decay
                } else {
                    cfg.weight_decay
                }
            })
            .collect();
        Self::new(cfg, store, ids, decay)
    }

    pub fn ids(&self) -> &[ParamId] {
        &self.ids
    }

    pub fn first_moment(&self, i: usize) -> &[f64] {
        &self.m[i]
    }

    pub fn second_moment(&self, i: usize) -> &[f64] {
        &self.v[i]
    }
}

/// One bias-corrected Adam update; `grads` must align with `state.ids()`.
pub fn adam_step(store: &mut ParamStore, grads: &[Tensor], state: &mut OptimState, lr: f64) -> Result<()> {
    if grads.len() != state.ids.len() {
        return Err(Error::InvalidArgument(format!(
            "adam: {} gradients for {} parameters",
            grads.len(),
            state.ids.len()
        )));
    }
    for (g, &id) in grads.iter().zip(&state.ids) {
        if g.shape() != store.get(id).shape() {
            return Err(Error::shape("adam_step", format!("{:?}", store.get(id).shape()), g.shape()));
        }
    }
    state.step += 1;
    let AdamConfig { beta1, beta2, eps, .. } = state.cfg;
    let c1 = 1.0 - beta1.powi(state.step as i32);
    let c2 = 1.0 - beta2.powi(state.step as i32);
    for (i, &id) in state.ids.iter().enumerate() {
        let lambda = state.decay[i];
        let theta = store.get_mut(id).data_mut();
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, &gj) in grads[i].data().iter().enumerate() {
            let g = gj + lambda * theta[j];
            m[j] = beta1 * m[j] + (1.0 - beta1) * g;
            v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
            let mhat = m[j] / c1;
            let vhat = v[j] / c2;
            theta[j] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
