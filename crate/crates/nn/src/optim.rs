use serde::{Deserialize, Serialize};

use crate::params::{snap, Gradients, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Linear warmup from `lr / warmup_steps` to `lr`.
    pub warmup_steps: u64,
    /// Global gradient norm limit; non-positive disables clipping.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 3e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, warmup_steps: 100, clip_norm: 1.0 }
    }
}

impl AdamConfig {
    pub fn lr_at(&self, step: u64) -> f64 {
        if step < self.warmup_steps {
            self.lr * (step + 1) as f64 / self.warmup_steps as f64
        } else {
            self.lr
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub lr: f64,
    pub grad_norm: f64,
}

/// Adam with bias correction. Parameters and moments are rounded to `f32`
/// after every update so that checkpoints resume bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors.iter().map(|t| vec![0.0; t.len()]).collect();
        Adam { config, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn update(&mut self, params: &mut ParamStore, grads: &mut Gradients) -> StepStats {
        let c = &self.config;
        let grad_norm = grads.global_norm();
        if c.clip_norm > 0.0 && grad_norm > c.clip_norm {
            grads.scale(c.clip_norm / grad_norm);
        }
        let lr = c.lr_at(self.step);
        self.step += 1;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (i, t) in params.tensors.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &grads.data[i]);
            for j in 0..t.data.len() {
                m[j] = snap(c.beta1 * m[j] + (1.0 - c.beta1) * g[j]);
                v[j] = snap(c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j]);
                let update = lr * (m[j] / bc1) / ((v[j] / bc2).sqrt() + c.eps);
                t.data[j] = snap(t.data[j] - update);
            }
        }
        StepStats { lr, grad_norm }
    }
}
