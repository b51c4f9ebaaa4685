use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Learning-rate multiplier as a function of the 1-based update count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Schedule {
    Constant,
    /// Linear warmup, then cosine decay to `min_ratio` at `total`.
    Cosine {
        warmup: u64,
        total: u64,
        min_ratio: f64,
    },
    /// Linear warmup, then `sqrt(warmup / step)`.
    InverseSqrt {
        warmup: u64,
    },
}

impl Schedule {
    pub fn factor(&self, step: u64) -> f64 {
        match *self {
            Schedule::Constant => 1.0,
            Schedule::Cosine { warmup, total, min_ratio } => {
                if step <= warmup && warmup > 0 {
                    return step as f64 / warmup as f64;
                }
                let span = total.saturating_sub(warmup).max(1);
                let progress = (step.saturating_sub(warmup) as f64 / span as f64).min(1.0);
                min_ratio + (1.0 - min_ratio) * 0.5 * (1.0 + (PI * progress).cos())
            }
            Schedule::InverseSqrt { warmup } => {
                let warmup = warmup.max(1);
                if step < warmup {
                    step as f64 / warmup as f64
                } else {
                    (warmup as f64 / step as f64).sqrt()
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub schedule: Schedule,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0, schedule: Schedule::Constant }
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, size: usize) -> Self {
        Self { cfg, step: 0, m: vec![0.0; size], v: vec![0.0; size] }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn current_lr(&self) -> f64 {
        self.cfg.lr * self.cfg.schedule.factor(self.step.max(1))
    }

    /// One update in place; returns the learning rate used.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> f64 {
        assert_eq!(params.len(), self.m.len(), "optimizer sized for a different parameter count");
        assert_eq!(grads.len(), params.len(), "one gradient per parameter");
        self.step += 1;
        let c = self.cfg;
        let lr = c.lr * c.schedule.factor(self.step);
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            params[i] -= lr * c.weight_decay * params[i];
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * mhat / (vhat.sqrt() + c.eps);
        }
        lr
    }
}
