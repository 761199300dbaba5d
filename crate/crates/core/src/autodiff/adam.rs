//! Adam with decoupled weight decay.

use super::params::ParamStore;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay: applied directly to weights, scaled by `lr`.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Per-parameter first/second moment buffers plus the shared step counter.
pub struct AdamState {
    cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore, cfg: AdamConfig) -> Self {
        let m = store.iter().map(|(_, p)| vec![0.0; p.value.numel()]).collect();
        let v = store.iter().map(|(_, p)| vec![0.0; p.value.numel()]).collect();
        AdamState { cfg, step: 0, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update over every parameter, consuming (and then
    /// zeroing) the gradient buffers.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::invalid(format!(
                "adam state tracks {} parameters, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);

        for (idx, p) in store.params_mut().iter_mut().enumerate() {
            let (m, v) = (&mut self.m[idx], &mut self.v[idx]);
            if m.len() != p.grad.len() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    lhs: vec![m.len()],
                    rhs: vec![p.grad.len()],
                });
            }
            let w = p.value.data_mut();
            for i in 0..w.len() {
                let g = p.grad[i];
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                w[i] -= c.lr * (m_hat / (v_hat.sqrt() + c.eps) + c.weight_decay * w[i]);
            }
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
        Ok(())
    }
}
