//! Adaptive moment estimation with a warmup-then-inverse-square-root
//! learning-rate schedule.

use crate::error::{Result, SaaError};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup_steps: usize,
}

impl AdamConfig {
    /// Desk defaults: base LR 1e-3, warmup 400 steps.
    pub fn desk() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, warmup_steps: 400 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(SaaError::Config("invalid optimizer settings".into()));
        }
        Ok(())
    }

    /// lr * min(t/warmup, sqrt(warmup/t)); the two branches meet at
    /// t = warmup.
    pub fn lr_at(&self, step: usize) -> f64 {
        let t = step.max(1) as f64;
        let w = self.warmup_steps.max(1) as f64;
        self.lr * (t / w).min((w / t).sqrt())
    }
}

pub struct Adam {
    pub cfg: AdamConfig,
    params: Vec<Tensor>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step_count: usize,
}

impl Adam {
    pub fn new(params: Vec<Tensor>, cfg: AdamConfig) -> Result<Self> {
        cfg.validate()?;
        let m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        let v = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        Ok(Adam { cfg, params, m, v, step_count: 0 })
    }

    pub fn steps_taken(&self) -> usize {
        self.step_count
    }

    /// Apply one update from the accumulated gradients, then clear them.
    /// Parameters without a gradient are left untouched.
    pub fn step(&mut self) {
        self.step_count += 1;
        let lr = self.cfg.lr_at(self.step_count);
        let (b1, b2, eps) = (self.cfg.beta1, self.cfg.beta2, self.cfg.eps);
        let bc1 = 1.0 - b1.powi(self.step_count as i32);
        let bc2 = 1.0 - b2.powi(self.step_count as i32);
        for (i, p) in self.params.iter().enumerate() {
            let Some(g) = p.grad() else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            p.set_data(|data| {
                for j in 0..data.len() {
                    m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                    v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                    let m_hat = m[j] / bc1;
                    let v_hat = v[j] / bc2;
                    data[j] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            });
            p.zero_grad();
        }
    }

    pub fn zero_grad(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }
}
